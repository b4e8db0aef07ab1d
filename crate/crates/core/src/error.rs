//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by image, rendering, dataset, training, and evaluation code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("malformed PGM: {0}")]
    MalformedPgm(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("pose out of range: {0}")]
    PoseOutOfRange(String),

    #[error("empty pool: {0}")]
    EmptyPool(String),

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    #[error("missing dependency: {0}")]
    MissingDependency(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
