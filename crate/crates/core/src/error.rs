use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the atlas pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot tokenize byte at offset {offset}: {reason}")]
    Tokenize { offset: usize, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("checkpoint checksum mismatch")]
    Checksum,

    #[error("unsupported checkpoint version {0}")]
    Version(u32),

    #[error("training diverged at step {step}")]
    Diverged {
        step: usize,
        last_checkpoint: Option<PathBuf>,
    },

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("{0}")]
    Undefined(&'static str),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }
}
