use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = HaoiError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HaoiError {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("version mismatch: expected {expected}, found {found}")]
    Version { expected: String, found: String },

    #[error("corrupt record {index} in {path}: {message}")]
    CorruptRecord {
        path: PathBuf,
        index: usize,
        message: String,
    },

    #[error("non-finite value in {term}: {detail}")]
    NonFinite { term: String, detail: String },

    #[error("context overflow: need {needed} positions, context holds {context}")]
    ContextOverflow { needed: usize, context: usize },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Grammar(#[from] crate::manip_lm::grammar::GrammarError),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),
}

impl HaoiError {
    pub fn validation(msg: impl Into<String>) -> Self {
        Self::Validation(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable code used by the command line front end.
    pub fn code(&self) -> &'static str {
        match self {
            Self::Validation(_) => "validation",
            Self::Range(_) => "range",
            Self::Version { .. } => "version",
            Self::CorruptRecord { .. } => "corrupt_record",
            Self::NonFinite { .. } => "non_finite",
            Self::ContextOverflow { .. } => "context_overflow",
            Self::Invariant(_) => "invariant",
            Self::Grammar(_) => "grammar",
            Self::Io { .. } => "io",
            Self::Json(_) => "json",
            Self::Tensor(_) => "tensor",
        }
    }
}
