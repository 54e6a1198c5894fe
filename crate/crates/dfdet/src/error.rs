//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration (missing weights, bad preset,
    /// adapter pattern matching nothing, zero-length schedule, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input data (labels outside {{0,1}}, empty batch, ...).
    #[error("input error: {0}")]
    Input(String),

    /// Tensor/matrix dimension mismatch.
    #[error("shape error: {0}")]
    Shape(String),

    /// A feature vector collapsed numerically (near-zero norm) or a slerp
    /// pair is exactly antipodal.
    #[error("degenerate features: {0}")]
    Degenerate(String),

    /// An operation's stated precondition does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A loss term is undefined on this batch (no positive pair, B < 2, ...).
    #[error("undefined loss term: {0}")]
    UndefinedTerm(String),

    /// A metric is undefined on this input (single-class AUROC, ...).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// A video yields no usable frames.
    #[error("empty video: {0}")]
    EmptyVideo(String),

    /// Dataset integrity violation (duplicate video ids across splits, ...).
    #[error("integrity error: {0}")]
    Integrity(String),

    /// Training diverged (NaN/Inf loss).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),
}
