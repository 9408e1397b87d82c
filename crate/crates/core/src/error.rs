use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {left:?} vs {right:?} ({op})")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: unknown value {value:?} for context field `{field}`")]
    UnknownContext {
        line: usize,
        field: String,
        value: String,
    },

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("vocabulary fingerprint mismatch: checkpoint has {expected}, vocabulary is {found}")]
    Fingerprint { expected: String, found: String },

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error("{0} requires a gC2S model")]
    RequiresGated(&'static str),

    #[error("missing forward cache: {0}")]
    MissingCache(&'static str),

    #[error("{0}")]
    Data(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
