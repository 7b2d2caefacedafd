//! MC dropout: one mean-only training, then many dropout-on forward passes
//! per stimulus.
//!
//! ```text
//! cargo run --release --example mc_dropout -- [draws] [max_epochs]
//! ```

use uqr::metrics::MetricValues;
use uqr::uq::{mc_dropout_pipeline, EnsembleConfig};
use uqr::{generate, train, AffectDimension, LossKind, RatingScale, Split, SynthConfig, TrainConfig};

fn main() -> uqr::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().ok());
    let draws = args.next().flatten().unwrap_or(50);
    let max_epochs = args.next().flatten().unwrap_or(30);

    let synth = generate(&SynthConfig::default(), &RatingScale::likert9())?;
    let data = &synth.dataset;
    let dim = AffectDimension::Arousal;
    let config = TrainConfig {
        loss_kind: LossKind::MseMeanOnly,
        affect_dimension: dim,
        max_epochs,
        ..TrainConfig::default()
    };
    let model = train(data, &config)?;
    let mc = mc_dropout_pipeline(&model.params, data, Split::Test, &EnsembleConfig::mc_draws(draws))?;

    let ids: Vec<&String> = mc.estimates.keys().collect();
    let truth_mu: Vec<f64> = ids
        .iter()
        .map(|id| data.target(id).expect("test id").dimension(dim).mu)
        .collect();
    let truth_sd: Vec<f64> = ids.iter().map(|id| synth.oracle[*id].dimension(dim).1).collect();
    let mean: Vec<f64> = mc.estimates.values().map(|e| e.mean).collect();
    let sd: Vec<f64> = mc.estimates.values().map(|e| e.sd).collect();

    println!("{draws} draws per stimulus on {} test stimuli", ids.len());
    println!(
        "mean of draws vs empirical mean: {:?}",
        MetricValues::compute(&truth_mu, &mean)?
    );
    println!(
        "draw SD vs true SD:              {:?}",
        MetricValues::compute(&truth_sd, &sd)?
    );
    for id in ids.iter().take(5) {
        let e = &mc.estimates[*id];
        println!(
            "  {id}: {:.3} ± {:.3}  (true SD {:.3})",
            e.mean,
            e.sd,
            synth.oracle[*id].dimension(dim).1
        );
    }
    Ok(())
}
