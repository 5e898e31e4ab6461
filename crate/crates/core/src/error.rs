use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to decode image {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("shape mismatch for `{name}`: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("architecture mismatch: {}", .diffs.join("; "))]
    ArchitectureMismatch { diffs: Vec<String> },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("degenerate losses: {0}")]
    DegenerateLosses(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Short machine-parseable category used by the command line front end.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "usage",
            Error::Io { .. } => "io",
            Error::Image { .. } | Error::Dataset(_) => "data",
            Error::ShapeMismatch { .. } | Error::ArchitectureMismatch { .. } | Error::Checkpoint(_) => "model",
            Error::DegenerateLosses(_) => "training",
            Error::Config(_) => "config",
            Error::Serde(_) => "format",
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
