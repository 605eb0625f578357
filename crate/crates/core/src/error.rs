use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error(
        "{path}: {malformed} of {lines} lines are malformed, refusing to continue (wrong file?)"
    )]
    MalformedInput {
        path: PathBuf,
        lines: usize,
        malformed: usize,
    },

    #[error("corpus is empty after filtering")]
    EmptyCorpus,

    #[error(
        "class {class:?} has {count} documents, at least {required} are needed for stratification"
    )]
    Stratification {
        class: String,
        count: usize,
        required: usize,
    },

    #[error("malformed taxonomy: {0}")]
    MalformedTaxonomy(String),

    #[error("unknown taxonomy node {0:?}")]
    UnknownNode(String),

    #[error("cycle in taxonomy: {}", .0.join(" -> "))]
    Cycle(Vec<String>),

    #[error("vocabulary is empty after document-frequency filtering")]
    EmptyVocabulary,

    #[error("need at least two distinct classes, found {0}")]
    DegenerateLabels(usize),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("training diverged for class {class:?} at epoch {epoch}")]
    Diverged { class: String, epoch: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported file format: {0}")]
    Format(String),

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse classification used to pick a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Runtime,
    Usage,
    Data,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Runtime => 1,
            ErrorKind::Usage => 2,
            ErrorKind::Data => 3,
        }
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } | Error::Diverged { .. } => ErrorKind::Runtime,
            Error::InvalidConfig(_) => ErrorKind::Usage,
            Error::Fold { source, .. } => source.kind(),
            Error::DimensionMismatch { .. } => ErrorKind::Runtime,
            _ => ErrorKind::Data,
        }
    }
}
