use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("block count mismatch: expected {expected}, found {found}")]
    BlockCount { expected: usize, found: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("non-finite objective at iteration {iteration} (block {block:?}): {detail}")]
    NonFinite {
        iteration: usize,
        block: Option<usize>,
        detail: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("inner solver failed on block {block} at iteration {iteration}: {message}")]
    InnerSolver {
        block: usize,
        iteration: usize,
        message: String,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("duplicate entry at ({row}, {col})")]
    DuplicateEntry { row: usize, col: usize },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{0}: no entries")]
    Empty(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

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

    /// True for errors caused by the numerics rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerical(_) | Error::NonFinite { .. } | Error::InnerSolver { .. }
        )
    }
}
