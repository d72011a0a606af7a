use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record at line {line}: {reason}")]
    Malformed { line: usize, reason: String },

    #[error("stars out of range at line {line}: {stars}")]
    StarsAtLine { line: usize, stars: i64 },

    #[error("stars out of range: {0} (expected 1..=5)")]
    StarsOutOfRange(i64),

    #[error("duplicate review id {0:?}")]
    DuplicateId(String),

    #[error("probability out of range: {0}")]
    ProbabilityOutOfRange(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty arc")]
    EmptyArc,

    #[error("review {0:?} produced zero sentences")]
    NoSentences(String),

    #[error("no arc for review {0:?}")]
    MissingArc(String),

    #[error("cache miss for {0}")]
    CacheMiss(String),

    #[error("scorer configuration: {0}")]
    ScorerConfig(String),

    #[error("template error: {0}")]
    Template(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("request failed after {attempts} attempts, last status {status}")]
    RetriesExhausted { attempts: u32, status: u16 },

    #[error("malformed response: {0}")]
    MalformedResponse(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
