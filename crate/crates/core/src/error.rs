use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("no instances")]
    NoInstances,

    #[error("covariance not PD (output block {block}, last jitter {jitter:e})")]
    NotPositiveDefinite { block: usize, jitter: f64 },

    #[error("non-finite negative log marginal likelihood at iteration {iteration}")]
    NonFiniteObjective { iteration: usize },

    #[error("conjugate gradients did not converge in {iterations} iterations (relative residual {residual:e})")]
    CgNotConverged { iterations: usize, residual: f64 },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical routines (as opposed to bad input or I/O).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::NonFiniteObjective { .. }
                | Error::CgNotConverged { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
