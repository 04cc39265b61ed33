use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Caller supplied an argument that violates an operation's precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The receiver is not in a state where the operation is defined
    /// (for example, querying an empty bank).
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// Malformed persisted bytes.
    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        Error::InvalidState(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
