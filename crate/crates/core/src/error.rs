use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("simulation failure on path {path} at step {step}: {reason}")]
    Simulation { path: usize, step: usize, reason: String },

    /// The Gram matrix is numerically singular: its smallest eigenvalue is
    /// at or below the scale-aware threshold.
    #[error("singular design: smallest eigenvalue {min_eigenvalue:e} <= threshold {threshold:e}")]
    SingularDesign { min_eigenvalue: f64, threshold: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
