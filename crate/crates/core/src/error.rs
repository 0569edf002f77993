use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("label vector has no set flag")]
    EmptyLabel,

    #[error("label vector entry {value} at class {index} is not 0 or 1")]
    NonBinaryLabel { index: usize, value: u8 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite loss at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("{what}: no query has a relevant item")]
    NoRelevantQueries { what: &'static str },

    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("record {record}: {reason}")]
    Record { record: usize, reason: String },

    #[error("config: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Config errors map to CLI exit status 1, everything else to 2.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Config(_))
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
