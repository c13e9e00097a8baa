use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the toolkit. Each maps to a process exit code.
#[derive(Debug, Error)]
pub enum BanetError {
    #[error(transparent)]
    Core(#[from] banet_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: cannot decode image: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("{0}")]
    Data(String),
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, BanetError>;

impl BanetError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BanetError::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 usage/config, 2 data/IO, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            BanetError::Usage(_) | BanetError::Config(_) => 1,
            BanetError::Numeric(_) => 3,
            _ => 2,
        }
    }
}
