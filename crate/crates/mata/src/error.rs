use std::path::PathBuf;

use thiserror::Error;

/// Malformed weight file.
#[derive(Debug, Error, PartialEq)]
#[error("weight file format error at byte {offset}: {message}")]
pub struct FormatError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error(transparent)]
    Engine(#[from] mata_core::Error),
}

impl CliError {
    /// 1 for usage, parse, IO and file-format problems; 2 for engine and numeric errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Engine(_) => 2,
            _ => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
