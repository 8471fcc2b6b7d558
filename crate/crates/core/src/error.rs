use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed line: {message}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate tag_id {tag_id:?} at lines {first_line} and {second_line}")]
    DuplicateTag {
        tag_id: String,
        first_line: usize,
        second_line: usize,
    },

    #[error("taxonomy file {0} contains no tag documents")]
    EmptyCorpus(PathBuf),

    #[error("record {record_id:?}: numeral {numeral:?} does not occur in report_text")]
    NumeralNotFound { record_id: String, numeral: String },

    #[error("record {record_id:?}: unknown gold tag {tag_id:?}")]
    UnknownGoldTag { record_id: String, tag_id: String },

    #[error("duplicate record_id {0:?}")]
    DuplicateRecord(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unparseable ranking reply: {0:?}")]
    UnparseableReply(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("zero-norm vector{}", context.as_ref().map(|c| format!(" for {c}")).unwrap_or_default())]
    ZeroNorm { context: Option<String> },

    #[error("non-finite embedding value{}", context.as_ref().map(|c| format!(" for {c}")).unwrap_or_default())]
    NonFinite { context: Option<String> },

    #[error("k = {k} out of range for index of size {size}")]
    KOutOfRange { k: usize, size: usize },

    #[error("malformed index file: {0}")]
    MalformedIndex(String),

    #[error("record {0:?} has no generated tag document")]
    MissingGeneration(String),

    #[error("backend {backend}: {message}")]
    Backend { backend: String, message: String },

    #[error("backend {backend}: authentication failed (HTTP {status})")]
    Auth { backend: String, status: u16 },

    #[error("backend {backend}: giving up after {attempts} attempts: {last_error}")]
    RetriesExhausted {
        backend: String,
        attempts: u32,
        last_error: String,
    },

    #[error("embedding for {tag_id:?} failed: {source}")]
    EmbedTag {
        tag_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("cache key {key} already holds a different response")]
    CacheConflict { key: String },

    #[error("malformed cache key {0:?}")]
    BadCacheKey(String),

    #[error("tag {0:?} in vote tally is not a candidate")]
    InconsistentTally(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn backend(backend: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Backend {
            backend: backend.into(),
            message: message.into(),
        }
    }
}
