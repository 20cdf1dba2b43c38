use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A numerical routine was asked for a value outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A precondition of a bound or estimate does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("no convergence: {0}")]
    Convergence(String),

    /// Must never happen on valid inputs (e.g. NaN in a solver state).
    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
