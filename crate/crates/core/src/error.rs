use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = ArnetError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ArnetError {
    #[error("{path}:{line}: parse error: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}:{line}: dimension error: {msg}")]
    Dimension {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}:{line}: value error: {msg}")]
    Value {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}:{line}: index error: {msg}")]
    Index {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unknown kernel id `{0}`")]
    UnknownKernel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("context computed for a different kernel ({expected} expected)")]
    ContextMismatch { expected: &'static str },

    #[error("not enough snapshots: n = {n} but the model needs n > {order}")]
    TooFewSnapshots { n: usize, order: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("linear program is infeasible")]
    LpInfeasible,

    #[error("linear program is unbounded")]
    LpUnbounded,

    #[error("optimizer failed: {0}")]
    Optimizer(String),

    #[error("undefined: {0}")]
    Undefined(String),
}

impl ArnetError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ArnetError::Io {
            path: path.into(),
            source,
        }
    }
}
