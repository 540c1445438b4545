use thiserror::Error;

/// Errors raised by the bound solver, the optimizers and the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Two operands have incompatible shapes.
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    /// A state or density failed validation.
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// A covariance matrix that should be PSD has a significantly negative eigenvalue.
    #[error("covariance is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    /// The joint Hilbert space for `k` exceeds the configured cap.
    #[error("k = {k} needs dimension {dim}, above the cap of {cap}")]
    ResourceCap { k: usize, dim: usize, cap: usize },

    /// An iterative numerical routine failed.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
