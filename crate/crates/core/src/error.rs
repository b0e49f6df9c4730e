use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, row counts or other structural preconditions do not hold.
    #[error("structural error: {0}")]
    Structural(String),

    /// A tabular cell could not be parsed.
    #[error("parse error in {file}: row {row}, column {column}: {message}")]
    Parse {
        file: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },

    /// A hyperparameter or option is out of range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A factor update or the lower bound produced a non-finite or
    /// non-invertible quantity.
    #[error("numerical failure in {term}: {message}")]
    Numerical { term: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn numerical(term: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Numerical {
            term: term.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
