//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside its mathematical domain (e.g. `t` outside `[0, 1]`).
    #[error("domain error: {0}")]
    Domain(String),

    /// A formula was evaluated at a point where it diverges (e.g. `alpha(t) = 0`).
    #[error("singularity error: {0}")]
    Singularity(String),

    /// Vector or parameter dimensions do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid configuration (bad key, bad value, invalid pairing).
    #[error("config error: {0}")]
    Config(String),

    /// A caller violated an operation contract (empty batch, mismatched architectures, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// Training diverged and was aborted.
    #[error("training aborted: {0}")]
    Training(String),

    /// Filesystem failure.
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    /// A persisted file could not be parsed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 1 check failure, 2 config error, 3 I/O error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::Parse { .. } => 3,
            Error::Config(_) => 2,
            _ => 1,
        }
    }
}
