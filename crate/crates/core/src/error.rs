use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = FimError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FimError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("line {line}: missing field `{field}`")]
    MissingField { line: usize, field: String },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("numeric check failed: {0}")]
    Numeric(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl FimError {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Config { key: key.into(), message: message.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::InvalidArgument(message.into())
    }

    /// Process exit status: 1 configuration, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } | Self::InvalidArgument(_) | Self::Shape(_) => 1,
            Self::NonFinite(_) | Self::Numeric(_) => 3,
            Self::EmptyInput(_)
            | Self::MissingField { .. }
            | Self::Parse { .. }
            | Self::Data(_)
            | Self::Checkpoint(_)
            | Self::Io { .. } => 2,
        }
    }
}
