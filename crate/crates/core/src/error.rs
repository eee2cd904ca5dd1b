use thiserror::Error;

/// Errors raised by estimation, band construction, selection and the harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("model is not causal: the AR polynomial has a root in the closed unit disk")]
    NotCausal,
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("series is empty")]
    EmptySeries,
    #[error("series contains a non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("maximum lag {max_lag} must be smaller than the series length {n}")]
    LagTooLarge { max_lag: usize, n: usize },
    #[error("Yule-Walker recursion degenerated at order {order}")]
    Degenerate { order: usize },
    #[error("Toeplitz matrix of order {order} is not positive definite")]
    NotPositiveDefinite { order: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("argument outside its domain: {0}")]
    Domain(String),
    #[error("band threshold {threshold} is not positive")]
    DegenerateBand { threshold: f64 },
    #[error("invalid index range: {0}")]
    InvalidRange(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("reports cannot be merged: {0}")]
    ConfigMismatch(String),
}

impl Error {
    /// True for failures caused by the numerics of the data rather than by
    /// malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Degenerate { .. }
                | Error::NotPositiveDefinite { .. }
                | Error::Numerical(_)
                | Error::DegenerateBand { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
