//! Error type shared by every stage of the toolkit.

use std::path::PathBuf;

/// Errors raised by trace I/O, numerical stages and the pipeline driver.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("corrupt trace file {path}: {message}")]
    Corruption { path: PathBuf, message: String },

    #[error("manifest/binary mismatch for {path}: {message}")]
    Consistency { path: PathBuf, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("serialization error on {path}: {message}")]
    Serde { path: PathBuf, message: String },

    #[error("stage `{stage}` failed{}: {source}", context.as_ref().map(|c| format!(" ({c})")).unwrap_or_default())]
    Stage {
        stage: &'static str,
        context: Option<String>,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str, context: Option<String>) -> Self {
        Error::Stage {
            stage,
            context,
            source: Box::new(self),
        }
    }

    /// Process exit code: 2 validation, 3 numerical, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Serde { .. } => 4,
            Error::Numerical(_) => 3,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
