use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("singular triangular system: zero pivot at row {row}")]
    Singular { row: usize },

    /// A quadrature (or other iterative evaluation) did not reach its tolerance.
    #[error(
        "numerical accuracy not reached: estimate {estimate:e}, achieved error {achieved:e}, requested {requested:e}"
    )]
    Accuracy {
        estimate: f64,
        achieved: f64,
        requested: f64,
    },

    #[error("resource limit: {0}")]
    Resource(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
