use std::io;

use thiserror::Error;

/// Errors raised anywhere in the retrieval pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied parameter is out of range or inconsistent.
    #[error("parameter error: {0}")]
    Param(String),

    /// A binary file could not be parsed.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// Input data violates an invariant (zero vector, missing labels, ...).
    #[error("data error: {0}")]
    Data(String),

    /// The operation is not valid in the current state (e.g. empty index).
    #[error("state error: {0}")]
    State(String),

    /// Key material does not match the object it is used with.
    #[error("authorization error: {0}")]
    Auth(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Param(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }

    pub(crate) fn auth(msg: impl Into<String>) -> Self {
        Error::Auth(msg.into())
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Param(_) | Error::State(_) => 2,
            Error::Format { .. } | Error::Data(_) | Error::Io(_) => 3,
            Error::Auth(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
