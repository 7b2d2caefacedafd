//! Train one mean-variance network with the NLL objective on synthetic
//! data, then save and reload the checkpoint.
//!
//! ```text
//! cargo run --release --example train_network -- [max_epochs]
//! ```

use std::time::Instant;

use uqr::network::predict;
use uqr::{generate, train, AffectDimension, Checkpoint, LossKind, RatingScale, Split, SynthConfig, TrainConfig};

fn main() -> uqr::Result<()> {
    let max_epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(100);
    let data = generate(&SynthConfig::default(), &RatingScale::likert9())?.dataset;

    let config = TrainConfig {
        loss_kind: LossKind::Nll,
        affect_dimension: AffectDimension::Valence,
        max_epochs,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let outcome = train(&data, &config)?;
    let report = &outcome.report;
    println!("trained {} epochs in {:.1?}", report.val_loss.len(), start.elapsed());
    for (epoch, (t, v)) in report.train_loss.iter().zip(&report.val_loss).enumerate().step_by(10) {
        println!(
            "epoch {epoch:>3}  train {t:>9.5}  val {v:>9.5}  lr {:.2e}",
            report.learning_rate[epoch]
        );
    }
    println!(
        "best epoch {:?}, validation loss {:?}",
        report.best_epoch, report.best_val_loss
    );

    let path = std::env::temp_dir().join("uqr_train_network.json");
    let checkpoint = Checkpoint {
        params: outcome.params,
        training_seed: config.seed,
    };
    checkpoint.save(&path)?;
    let reloaded = Checkpoint::load(&path)?;
    let id = data.ids(Split::Test)[0];
    let x = data.features(id).expect("test id");
    let p = predict(&reloaded.params, x)?;
    let t = data.target(id).expect("test id").dimension(AffectDimension::Valence);
    println!(
        "{id}: predicted mean {:.3} sd {:.3}, empirical mean {:.3} sd {:.3}",
        p.mu_hat,
        p.sigma_hat.unwrap_or(f64::NAN),
        t.mu,
        t.sigma
    );
    println!("checkpoint at {}", path.display());
    Ok(())
}
