use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid group law: {0}")]
    InvalidGroup(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("resolution too low: {0}")]
    Resolution(String),

    #[error("singular Gram matrix (condition number {condition:.3e})")]
    SingularGram { condition: f64 },

    #[error("insufficient cancellation: kernel needs order {required}, Omega has {available}")]
    Cancellation { required: i32, available: i32 },

    #[error("time step {dt:.3e} exceeds stability bound {bound:.3e}")]
    Cfl { dt: f64, bound: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("quadrature unresolved: {0}")]
    Unresolved(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
