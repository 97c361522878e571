use std::path::PathBuf;

/// Errors raised anywhere in the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {reason}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}:{line}: duplicate id {id:?}")]
    DuplicateId {
        path: PathBuf,
        line: usize,
        id: String,
    },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid split ratios {0:?}: must be positive and sum to 1")]
    InvalidRatios([f64; 3]),

    #[error("embedding store: {0}")]
    Store(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("zero-norm vector")]
    ZeroNorm,

    #[error("empty matrix")]
    EmptyMatrix,

    #[error("unknown document id {0:?}")]
    UnknownDoc(String),

    #[error("missing token embeddings for candidate {0:?}")]
    MissingTokens(String),

    #[error("BM25 corpus has zero average document length")]
    ZeroAvgLength,

    #[error("relevance scorer returned out-of-range score {score} for {id:?}")]
    ScoreOutOfRange { id: String, score: f64 },

    #[error("query alone needs {needed} tokens, budget is {budget}")]
    BudgetTooSmall { needed: usize, budget: usize },

    #[error("no contexts available")]
    NoContexts,

    #[error("endpoint {endpoint}: {reason}")]
    Endpoint { endpoint: String, reason: String },

    #[error("empty reference text")]
    EmptyReference,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("report: {0}")]
    Report(String),

    #[error("example {id}: {source}")]
    Example {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn endpoint(endpoint: &str, reason: impl std::fmt::Display) -> Self {
        Error::Endpoint {
            endpoint: endpoint.to_string(),
            reason: reason.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
