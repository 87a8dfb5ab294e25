use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("format error at byte offset {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error("no road-glance frames available to build a baseline for subject {subject}")]
    BaselineUnavailable { subject: u32 },

    #[error("AUC undefined: {0}")]
    UndefinedAuc(String),

    #[error("tri-training produced no agreeing proxy labels out of {candidates} candidates")]
    EmptyProxy { candidates: usize },

    #[error("sequencing error: {0}")]
    Sequencing(String),

    #[error("checkpoint config hash mismatch (expected {expected}, found {found})")]
    ConfigHashMismatch { expected: String, found: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension { op, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
