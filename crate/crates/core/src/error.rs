//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {0} has near-zero norm and cannot be normalized")]
    DegenerateRow(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("decomposition did not converge")]
    NumericalFailure,
    #[error("invalid cluster count k={k} for {rows} rows")]
    InvalidK { k: usize, rows: usize },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),
    #[error("missing store: {0}")]
    StoreMissing(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("non-finite loss at step {0}; last good checkpoint retained")]
    NonFiniteLoss(u64),
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("bad magic in {0}")]
    BadMagic(String),
    #[error("unsupported store version {0}")]
    VersionUnsupported(u32),
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
