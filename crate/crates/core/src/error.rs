use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the pipeline. Variants are grouped so the CLI can map
/// them onto exit codes (config / data / numeric).
#[derive(Debug, Error)]
pub enum GsptError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("bad file format in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

impl GsptError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GsptError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        GsptError::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        GsptError::Data(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        GsptError::Config(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        GsptError::Numeric(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, GsptError>;
