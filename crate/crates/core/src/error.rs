use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input data or parameters violate a documented precondition.
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: {what} is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    DimensionMismatch {
        what: &'static str,
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },

    #[error("image too small: {width}x{height}, need at least {min} px per side")]
    TooSmall {
        width: usize,
        height: usize,
        min: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Codec { path: PathBuf, msg: String },

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    /// A runtime check on an output invariant failed.
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn codec(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Codec {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code for this error class: 1 validation, 2 I/O, 3 invariant.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invalid(_) | Error::DimensionMismatch { .. } | Error::TooSmall { .. } => 1,
            Error::Io { .. } | Error::Codec { .. } | Error::Format { .. } => 2,
            Error::Invariant(_) => 3,
        }
    }
}
