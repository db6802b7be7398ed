use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("unknown document `{0}`")]
    UnknownDoc(String),

    #[error("unknown query `{0}`")]
    UnknownQuery(String),

    #[error("empty feature vector for `{0}`")]
    EmptyFeatures(String),

    #[error("zero-norm pooled vector for `{0}` in cosine mode")]
    ZeroNorm(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("stale index: built by model {index}, current model is {model}")]
    StaleIndex { index: String, model: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: usize, message: String },

    #[error("degenerate response: both option tokens have zero mass")]
    DegenerateResponse,

    #[error("undefined rate: {0}")]
    UndefinedRate(String),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
