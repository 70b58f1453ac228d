use std::path::PathBuf;

/// Errors produced by the `sparseq` library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed magic number, header or text encoding.
    #[error("format error: {0}")]
    Format(String),

    /// Payload length disagrees with the header.
    #[error("corrupt data: {0}")]
    Corruption(String),

    /// A domain type invariant was violated (e.g. non-positive label height).
    #[error("validation error: {0}")]
    Validation(String),

    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inconsistent configuration (missing channel, unknown key, bad value).
    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged at step {step}: {reason}")]
    Training { step: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable process exit code: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            _ => 1,
        }
    }
}
