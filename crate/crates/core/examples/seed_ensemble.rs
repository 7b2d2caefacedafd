//! Seed ensemble: train the mean-only objective under several seeds and use
//! the spread of their predictions as an SD estimate.
//!
//! ```text
//! cargo run --release --example seed_ensemble -- [members] [max_epochs]
//! ```

use uqr::metrics::MetricValues;
use uqr::uq::{seeds_pipeline, EnsembleConfig, EnsembleManifest};
use uqr::{generate, AffectDimension, LossKind, RatingScale, Split, SynthConfig, TrainConfig};

fn main() -> uqr::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().ok());
    let members = args.next().flatten().unwrap_or(5);
    let max_epochs = args.next().flatten().unwrap_or(30);

    let synth = generate(&SynthConfig::default(), &RatingScale::likert9())?;
    let data = &synth.dataset;
    let dim = AffectDimension::Valence;
    let train = TrainConfig {
        loss_kind: LossKind::MseMeanOnly,
        affect_dimension: dim,
        max_epochs,
        ..TrainConfig::default()
    };
    let ensemble = seeds_pipeline(data, &train, &EnsembleConfig::seeds(members), Split::Test, false)?;
    println!("seeds {:?}", ensemble.seeds);

    let mut empirical = Vec::new();
    let mut truth = Vec::new();
    let mut spread = Vec::new();
    for (id, e) in &ensemble.estimates {
        empirical.push(data.target(id).expect("test id").dimension(dim).sigma);
        truth.push(synth.oracle[id].dimension(dim).1);
        spread.push(e.sd);
    }
    let mean_spread = spread.iter().sum::<f64>() / spread.len() as f64;
    let mean_sigma = empirical.iter().sum::<f64>() / empirical.len() as f64;
    println!("average seed spread {mean_spread:.4} vs average empirical SD {mean_sigma:.4}");
    println!(
        "against empirical SD: {:?}",
        MetricValues::compute(&empirical, &spread)?
    );
    println!("against true SD:      {:?}", MetricValues::compute(&truth, &spread)?);

    // The per-stimulus samples are enough to re-aggregate later.
    let manifest = EnsembleManifest {
        method: "seeds".into(),
        seeds: ensemble.seeds.clone(),
        member_checkpoints: Vec::new(),
        samples: ensemble.samples.clone(),
    };
    let path = std::env::temp_dir().join("uqr_seed_ensemble.json");
    manifest.save(&path)?;
    let again = EnsembleManifest::load(&path)?.reaggregate()?;
    assert_eq!(again, ensemble.estimates);
    println!("ensemble manifest at {}", path.display());
    Ok(())
}
