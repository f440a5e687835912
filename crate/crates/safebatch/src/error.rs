use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong outside the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    /// A malformed line in an input file. `line` is 1-based and counts the
    /// header.
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    /// A file whose header or shape does not match what the reader expects.
    #[error("bad file format: {0}")]
    Format(String),

    /// Flag values that make no sense together.
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] safebatch_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(line: u64, message: impl Into<String>) -> Self {
        Error::Parse { line, message: message.into() }
    }
}
