use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("record {record}: {message}")]
    InvalidRecord { record: String, message: String },

    #[error("need at least {needed} records, got {got}")]
    TooFewRecords { needed: usize, got: usize },

    #[error("no evidence and no active knowledge")]
    NoEvidence,

    #[error("entity id {id} out of range (vocabulary size {size})")]
    EntityOutOfRange { id: usize, size: usize },

    #[error("trace does not match tree: {0}")]
    TraceMismatch(String),

    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("epoch {epoch}, {context}: {source}")]
    Training {
        epoch: usize,
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("no buildable trees in training set")]
    NoTrainableTrees,

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("empty test set")]
    EmptyTestSet,

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
