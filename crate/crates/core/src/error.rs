use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {context}")]
    Numeric { context: String },

    #[error("invalid state: {0}")]
    State(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn numeric(context: impl Into<String>) -> Self {
        Error::Numeric {
            context: context.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps a numeric error with additional context, leaving other kinds untouched.
    pub fn with_context(self, context: impl std::fmt::Display) -> Self {
        match self {
            Error::Numeric { context: inner } => Error::Numeric {
                context: format!("{context}: {inner}"),
            },
            Error::UndefinedMetric(inner) => Error::UndefinedMetric(format!("{context}: {inner}")),
            other => other,
        }
    }

    /// Process exit code used by the experiment CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric { .. } => 3,
            Error::UndefinedMetric(_) | Error::InsufficientSamples { .. } => 4,
            Error::Config(_)
            | Error::Schema(_)
            | Error::Parse { .. }
            | Error::EmptyDataset(_)
            | Error::Io { .. }
            | Error::Json(_)
            | Error::Csv(_) => 2,
            Error::Shape { .. } | Error::State(_) => 1,
        }
    }
}
