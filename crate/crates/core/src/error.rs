use thiserror::Error;

/// Errors raised by the engine and its diagnostics.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside its mathematical domain (e.g. a non-positive temperature).
    #[error("domain error: {0}")]
    Domain(String),
    /// Malformed or inconsistent input.
    #[error("input error: {0}")]
    Input(String),
    /// An exact computation would exceed its configured size limit.
    #[error("capacity exceeded: {what} needs {required}, limit is {limit}")]
    Capacity {
        what: String,
        required: u128,
        limit: u128,
    },
    /// The remote scorer could not be reached or timed out.
    #[error("transport error: {0}")]
    Transport(String),
    /// The remote scorer answered with something that violates the wire protocol.
    #[error("protocol error: {0}")]
    Protocol(String),
    /// The remote scorer reported a failure while scoring.
    #[error("scoring error: {0}")]
    Scoring(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn capacity(what: impl Into<String>, required: u128, limit: u128) -> Self {
        Error::Capacity {
            what: what.into(),
            required,
            limit,
        }
    }

    /// True for failures caused by the remote transport rather than by the caller.
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            Error::Transport(_) | Error::Protocol(_) | Error::Scoring(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
