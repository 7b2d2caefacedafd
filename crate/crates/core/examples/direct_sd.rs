//! Networks with an SD head: compare the KLD, MSE and NLL objectives on
//! unquantized synthetic ratings, where the true SD is known.
//!
//! ```text
//! cargo run --release --example direct_sd -- [max_epochs]
//! ```

use uqr::metrics::MetricValues;
use uqr::uq::direct_estimator;
use uqr::{generate, train, AffectDimension, LossKind, RatingScale, Split, SynthConfig, TrainConfig};

fn main() -> uqr::Result<()> {
    let max_epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(100);
    let synth = generate(
        &SynthConfig {
            quantize: false,
            ..SynthConfig::default()
        },
        &RatingScale::likert9(),
    )?;
    let data = &synth.dataset;
    let dim = AffectDimension::Valence;

    for loss in [LossKind::Kld, LossKind::Mse, LossKind::Nll] {
        let config = TrainConfig {
            loss_kind: loss,
            affect_dimension: dim,
            max_epochs,
            ..TrainConfig::default()
        };
        let model = train(data, &config)?;
        let estimates = direct_estimator(&model.params, data, Split::Test)?;
        let (mut mu, mut mu_hat, mut sigma, mut sigma_hat) = (vec![], vec![], vec![], vec![]);
        for (id, e) in &estimates {
            mu.push(data.target(id).expect("test id").dimension(dim).mu);
            sigma.push(synth.oracle[id].dimension(dim).1);
            mu_hat.push(e.mu_hat);
            sigma_hat.push(e.sigma_hat);
        }
        let m = MetricValues::compute(&mu, &mu_hat)?;
        let s = MetricValues::compute(&sigma, &sigma_hat)?;
        println!(
            "{loss:<4} mean R² {:.3}   SD vs true: R² {:.3}, Pearson {:.3}, Spearman {:.3}",
            m.r2.unwrap_or(f64::NAN),
            s.r2.unwrap_or(f64::NAN),
            s.pearson.unwrap_or(f64::NAN),
            s.spearman.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
