use std::path::PathBuf;
use thiserror::Error;

/// Crate-wide error type. Exit codes: 2 bad input, 3 numeric failure,
/// 4 artifact mismatch.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A malformed line in a JSON Lines input, with its 1-based line number.
    #[error("{path}:{line}: {msg}")]
    Line {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("bad input: {0}")]
    Input(String),

    /// Corrupt or mismatched artifact file (wrong magic, truncation, ...).
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Artifacts produced under different configurations were mixed.
    #[error("artifact mismatch: {0}")]
    Mismatch(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 3,
            Error::Mismatch(_) => 4,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
