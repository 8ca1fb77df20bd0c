//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation's preconditions.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A file did not match its expected on-disk format.
    #[error("format error: {0}")]
    DataFormat(String),

    /// A computation produced NaN/Inf or otherwise diverged.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A score is undefined for the given signals (e.g. silent target).
    #[error("no score: {0}")]
    NoScore(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::DataFormat(msg.into())
    }

    /// Process exit code for the CLI: 2 usage, 3 data/format, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) => 2,
            Error::DataFormat(_) | Error::Io(_) | Error::Wav(_) => 3,
            Error::Numerical(_) | Error::NoScore(_) => 4,
        }
    }
}
