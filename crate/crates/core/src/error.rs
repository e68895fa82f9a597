use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the evaluation stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{side} side has {available} < {requested} sentences")]
    InsufficientSentences {
        side: &'static str,
        available: usize,
        requested: usize,
    },

    #[error("sequence of length {len} exceeds the maximum of {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("non-finite loss at epoch {epoch}, step {step} (batch {batch})")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        batch: usize,
    },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("vocabulary mismatch: expected {expected} entries, found {found}")]
    VocabMismatch { expected: usize, found: usize },

    #[error("unknown token {0:?}")]
    UnknownToken(String),

    #[error("unanswered requests: {0:?}")]
    UnansweredRequests(Vec<u64>),

    #[error("attention unavailable from backend {0}")]
    AttentionUnavailable(String),

    #[error("invalid response {id}: {message}")]
    InvalidResponse { id: u64, message: String },

    #[error("malformed pair: {0}")]
    MalformedPair(String),

    #[error("no scorable items for {0}")]
    NoItems(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("missing score for measure {measure} at r={r}")]
    MissingCell { measure: String, r: f64 },

    #[error("operation not supported by backend: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
