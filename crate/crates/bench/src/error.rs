use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    /// The input file could not be turned into a dataset.
    #[error("{path}: {message}")]
    Ingest { path: String, message: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Gp(#[from] itergp::Error),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, BenchError>;

impl BenchError {
    pub fn contract(msg: impl Into<String>) -> Self {
        BenchError::Contract(msg.into())
    }

    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| BenchError::Io { path: path.to_path_buf(), source }
    }

    pub fn json(path: &Path) -> impl FnOnce(serde_json::Error) -> Self + '_ {
        move |source| BenchError::Json { path: path.to_path_buf(), source }
    }
}
