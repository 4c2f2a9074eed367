use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("division by zero at flat index {index}")]
    DivisionByZero { index: usize },

    #[error("numeric overflow: {0}")]
    NumericOverflow(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("class index {label} out of range for {classes} classes")]
    ClassOutOfRange { label: usize, classes: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("optimizer state is not initialized")]
    OptimizerUninitialized,

    #[error("strategy `{strategy}` requires {what} in the step context")]
    MissingContext { strategy: &'static str, what: &'static str },

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown config key `{0}`")]
    UnknownConfigKey(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the user's input (bad config, malformed
    /// files, bad arguments) rather than a numeric or runtime fault.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::UnknownConfigKey(_) | Error::Parse { .. } | Error::InvalidArgument(_)
        )
    }
}
