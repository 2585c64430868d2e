use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at data row {row}, column `{column}`: cannot read `{token}` as a number")]
    Parse {
        row: usize,
        column: String,
        token: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("column `{column}` has no observed values")]
    NoObserved { column: String },

    #[error("numeric failure in column `{column}`: {reason}")]
    Numeric { column: String, reason: String },

    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged { epoch: usize },

    #[error("unknown method `{id}` (valid ids: {valid})")]
    UnknownMethod { id: String, valid: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
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

pub type Result<T> = std::result::Result<T, Error>;
