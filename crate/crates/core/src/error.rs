use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("state dimension must be even, got {0}")]
    OddDimension(usize),

    #[error("expected a square map, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("backward requires a scalar output, got shape {rows}x{cols}")]
    NonScalarOutput { rows: usize, cols: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("QR iteration did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("integration exceeded {max_steps} steps at t = {t}")]
    MaxStepsExceeded { max_steps: usize, t: f64 },

    #[error("state became non-finite at t = {t}")]
    Overflow { t: f64 },

    #[error("state outside the domain of the system: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown system '{0}'")]
    UnknownSystem(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
