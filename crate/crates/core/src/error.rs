//! Error types shared across the pipeline.

use thiserror::Error;

/// Errors produced by dataset handling, graph construction, models and training.
#[derive(Error, Debug)]
pub enum Error {
    #[error("empty series: {0}")]
    EmptySeries(String),

    #[error("non-finite value in series `{series}` at t={index}")]
    NonFiniteInput { series: String, index: usize },

    #[error("series length mismatch: {0}")]
    LengthMismatch(String),

    #[error("invalid slice bounds a={a}, b={b} for series of length {len}")]
    InvalidSlice { a: usize, b: usize, len: usize },

    #[error("dimension count mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid bounds for dimension `{name}`: min={min}, max={max}")]
    InvalidBounds { name: String, min: f64, max: f64 },

    #[error("window size {window} exceeds series length {len}")]
    WindowTooLarge { window: usize, len: usize },

    #[error("invalid windowing config: {0}")]
    InvalidWindowing(String),

    #[error("node count must be at least 1")]
    EmptyGraph,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("window length mismatch: model expects {expected}, input has {got}")]
    WindowLengthMismatch { expected: usize, got: usize },

    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("class `{0}` not in configured class set")]
    UnknownClass(String),

    #[error("leave-one-group-out split needs at least {needed} injection instances of class `{class}`, found {found}")]
    TooFewInstances {
        class: String,
        needed: usize,
        found: usize,
    },

    #[error("empty test set")]
    EmptyTestSet,

    #[error("empty evaluation list")]
    EmptyLevelList,

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("malformed dataset: {0}")]
    MalformedDataset(String),

    #[error("malformed container: {0}")]
    MalformedContainer(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
