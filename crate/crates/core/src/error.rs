use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent dimensions, unknown config keys, incompatible checkpoints.
    #[error("configuration error: {0}")]
    Config(String),

    /// Caller passed a value outside an operation's domain.
    #[error("input error: {0}")]
    Input(String),

    /// Malformed or missing corpus data.
    #[error("data error in {path}{}: {message}", line.map(|l| format!(" line {l}")).unwrap_or_default())]
    Data {
        path: PathBuf,
        line: Option<usize>,
        message: String,
    },

    #[error("non-finite value encountered at {location}")]
    Numeric { location: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn data(path: impl Into<PathBuf>, line: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Data {
            path: path.into(),
            line,
            message: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Input(_) | Error::Data { .. } | Error::Io { .. } | Error::Checkpoint(_) => 2,
            Error::Numeric { .. } => 3,
        }
    }
}
