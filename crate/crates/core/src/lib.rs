//! Distributional regression of subjective affect ratings.
//!
//! Each stimulus is summarised by the mean and the interrater standard
//! deviation of its valence and arousal ratings. The crate trains small
//! networks that predict both, and compares five ways of obtaining an SD
//! estimate:
//!
//! * `seeds`: spread of mean predictions across independently seeded trainings
//! * `mc_dropout`: spread across stochastic forward passes of one network
//! * `nll`, `mse`, `kld`: a second network head trained on the spread itself
//!
//! Runnable walkthroughs live in `examples/`:
//! `synth_dataset`, `train_network`, `seed_ensemble`, `mc_dropout`,
//! `direct_sd`, `metrics_report` and `full_benchmark`.

pub mod benchmark;
pub mod cli;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod optimize;
mod stats;
pub mod synth;
pub mod uq;

pub use benchmark::{run_benchmark, BenchmarkConfig, Method};
pub use data::{load_dataset, AffectDimension, Dataset, RatingScale, Split, Target};
pub use error::{Error, Result};
pub use losses::LossKind;
pub use network::{Architecture, Checkpoint, HeadMode, NetworkParameters};
pub use optimize::{train, TrainConfig, TrainOutcome, TrainReport};
pub use synth::{generate, SynthConfig};
