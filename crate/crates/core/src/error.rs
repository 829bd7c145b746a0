use thiserror::Error;

/// Errors produced by the optimization toolkit.
#[derive(Debug, Error)]
pub enum TvrError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid bounds for coordinate {index}: lo={lo} must be < hi={hi}")]
    InvalidBounds { index: usize, lo: f64, hi: f64 },

    #[error("invalid noise specification: {0}")]
    InvalidNoise(String),

    #[error("operation not supported for discrete noise: {0}")]
    UnsupportedVariant(&'static str),

    #[error("value {value} lies outside the support of noise dimension {dim}")]
    OutsideSupport { dim: usize, value: f64 },

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParams(String),

    #[error("Gram matrix is not positive definite even after jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },

    #[error("not enough data to fit the surrogate: need at least {need}, have {have}")]
    NotEnoughData { need: usize, have: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("optimizer failed: {0}")]
    Optimizer(String),

    #[error("unknown {kind} `{name}` (expected one of: {expected})")]
    Unknown {
        kind: &'static str,
        name: String,
        expected: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TvrError>;
