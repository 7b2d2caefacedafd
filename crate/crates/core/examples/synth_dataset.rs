//! Generate a synthetic dataset with known per-stimulus mean and SD, write
//! it as CSV, and load it back through the regular ingestion path.
//!
//! ```text
//! cargo run --release --example synth_dataset -- [out_dir]
//! ```

use std::path::PathBuf;

use uqr::data::load_dataset;
use uqr::synth::{read_oracle, write_synth};
use uqr::{generate, AffectDimension, RatingScale, Split, SynthConfig};

fn main() -> uqr::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("uqr_synth"));
    let scale = RatingScale::likert9();
    let config = SynthConfig::default();
    let synth = generate(&config, &scale)?;
    let files = write_synth(&synth, &out)?;

    let dataset = load_dataset(&files.features, &files.annotations, &files.splits, &scale)?;
    println!(
        "{} stimuli, {} features, {} raters each",
        dataset.len(),
        dataset.feature_dim(),
        config.raters_per_stimulus
    );
    for (split, n) in dataset.split_counts() {
        println!("  {split:<5} {n}");
    }

    for dim in AffectDimension::ALL {
        let oracle = read_oracle(&files.oracle[&dim])?;
        let ids = dataset.ids(Split::Train);
        let mut err_mu = 0.0;
        let mut err_sigma = 0.0;
        for id in &ids {
            let t = dataset.target(id).expect("train id").dimension(dim);
            let (mu, sigma) = oracle[*id];
            err_mu += (t.mu - mu).abs();
            err_sigma += (t.sigma - sigma).abs();
        }
        let n = ids.len() as f64;
        println!(
            "{dim}: mean |empirical - true| is {:.3} for the mean and {:.3} for the SD",
            err_mu / n,
            err_sigma / n
        );
    }
    println!("files in {}", out.display());
    Ok(())
}
