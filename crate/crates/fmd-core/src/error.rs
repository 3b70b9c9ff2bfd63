use thiserror::Error;

/// Errors raised by the library. Algorithm-level failures that still produce a
/// best-effort answer are reported through flags on the result types instead.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FmdError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("too few samples: need {need}, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("samples too concentrated below the lower scale bound {sigma_lower}")]
    TooConcentrated { sigma_lower: f64 },
    #[error("infinite support")]
    InfiniteSupport,
    #[error("odd moment degree {0} is not supported")]
    OddDegree(usize),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("optimizer did not converge: {0}")]
    NoConvergence(String),
}

pub type Result<T> = std::result::Result<T, FmdError>;

pub(crate) fn invalid(msg: impl Into<String>) -> FmdError {
    FmdError::InvalidArgument(msg.into())
}
