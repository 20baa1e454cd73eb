//! Crate-wide error type with machine-readable categories.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::embed::format::FormatError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value or data structure violates a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration violates one of its invariants.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Matrix or vector dimensions do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// AUC requested on a single-class score set.
    #[error("undefined AUC: {0}")]
    UndefinedAuc(String),

    /// Pipeline configuration text failed to parse.
    #[error("config parse error at line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },

    /// Binary container violation (magic, version, length, payload).
    #[error(transparent)]
    Format(#[from] FormatError),

    /// Filesystem failure, annotated with the offending path.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A benchmark run failed; identifies the (split, replica) task.
    #[error("split {split} replica {replica}: {source}")]
    Protocol {
        split: u32,
        replica: u32,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// Stable category token, used by the CLI for machine-readable failures.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::InvalidConfig(_) => "invalid-config",
            Error::ShapeMismatch(_) => "shape-mismatch",
            Error::UndefinedAuc(_) => "undefined-auc",
            Error::ConfigParse { .. } => "config-parse",
            Error::Format(_) => "format",
            Error::Io { .. } => "io",
            Error::Protocol { .. } => "protocol",
        }
    }
}
