//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rating {value} for stimulus `{stimulus}` (rater `{rater}`) is outside [{min}, {max}]")]
    RatingOutOfRange {
        stimulus: String,
        rater: String,
        value: f64,
        min: i32,
        max: i32,
    },

    #[error("rating {value} is outside [{min}, {max}]")]
    RatingValue { value: f64, min: i32, max: i32 },

    #[error("stimulus `{stimulus}` has {count} rating(s); at least 2 are required")]
    TooFewRatings { stimulus: String, count: usize },

    #[error("invalid rating scale: {0}")]
    InvalidScale(String),

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dataset inconsistency: {0}")]
    Dataset(String),

    #[error("invalid split request: {0}")]
    Split(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid network configuration: {0}")]
    Network(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("uncertainty estimation: {0}")]
    Estimator(String),

    #[error("ensemble member with seed {seed} failed: {source}")]
    MemberFailed {
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by the caller's inputs (files, configs, data)
    /// rather than by a failure during computation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::RatingOutOfRange { .. }
                | Error::RatingValue { .. }
                | Error::TooFewRatings { .. }
                | Error::InvalidScale(_)
                | Error::Parse { .. }
                | Error::Io { .. }
                | Error::Dataset(_)
                | Error::Split(_)
                | Error::Config(_)
                | Error::Checkpoint(_)
        )
    }
}
