use alloc::string::String;
use core::fmt;

/// Errors raised by the core pipeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// An argument violated an operation's precondition.
    InvalidArgument(String),
    /// The operation is not allowed in the current state.
    State(String),
    /// A NaN or infinity appeared in a network activation or gradient.
    NonFinite {
        /// Where the value was detected.
        stage: &'static str,
    },
}

/// Result alias using [`Error`].
pub type Result<T, E = Error> = core::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(m) => write!(f, "invalid argument: {m}"),
            Error::State(m) => write!(f, "invalid state: {m}"),
            Error::NonFinite { stage } => write!(f, "non-finite value after {stage}"),
        }
    }
}

impl core::error::Error for Error {}
