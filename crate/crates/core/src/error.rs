use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("invalid combination: {0}")]
    InvalidCombination(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("undefined distribution: {0}")]
    UndefinedDistribution(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no eligible split: {0}")]
    NoEligibleSplit(String),

    #[error("rejection budget exhausted after {attempts} draws")]
    RejectionBudgetExhausted { attempts: usize },

    #[error("no pseudo-comp candidates: {0}")]
    NoPseudoCompCandidates(String),

    #[error("pool exhausted: {0}")]
    PoolExhausted(String),

    #[error("unknown combination: {0}")]
    UnknownCombination(String),

    #[error("missing cell: {0}")]
    MissingCell(String),

    #[error("protocol tag mismatch: expected {expected}, found {found}")]
    TagMismatch { expected: String, found: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
