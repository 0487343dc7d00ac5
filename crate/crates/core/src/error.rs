use std::io;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite parameter in block `{0}`")]
    NonFinite(String),

    #[error("bad magic")]
    BadMagic,

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),

    #[error("truncated: {0}")]
    Truncated(String),

    #[error("malformed header: {0}")]
    Header(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("incompatible checkpoints: {0}")]
    Incompatible(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid merge weights: {0}")]
    Weights(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("q-statistic undefined (zero denominator)")]
    QUndefined,

    #[error("ratio-error undefined (no shared errors)")]
    RatioUndefined,

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
