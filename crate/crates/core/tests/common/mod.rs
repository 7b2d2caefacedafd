#![allow(dead_code)]

use std::path::Path;

use uqr::synth::{write_synth, SynthFiles};
use uqr::{generate, Dataset, RatingScale, SynthConfig, TrainConfig};

pub fn small_synth(n: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        n_stimuli: n,
        feature_dim: 6,
        seed,
        ..SynthConfig::default()
    }
}

pub fn small_dataset(n: usize, seed: u64) -> Dataset {
    generate(&small_synth(n, seed), &RatingScale::likert9())
        .unwrap()
        .dataset
}

pub fn write_small(dir: &Path, n: usize) -> SynthFiles {
    let out = generate(&small_synth(n, 5), &RatingScale::likert9()).unwrap();
    write_synth(&out, dir).unwrap()
}

/// A cheap recipe: narrow layers and short epochs.
pub fn quick_train() -> TrainConfig {
    TrainConfig {
        hidden_sizes: vec![16, 16],
        max_epochs: 4,
        batches_per_epoch: 8,
        batch_size: 16,
        ..TrainConfig::default()
    }
}

pub fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}
