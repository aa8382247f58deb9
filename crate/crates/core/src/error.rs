use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HtdError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("png: {0}")]
    Png(#[from] png::EncodingError),
    #[error("schema: {0}")]
    Schema(String),
    #[error("shape: {0}")]
    Shape(String),
    #[error("data: {0}")]
    Data(String),
    #[error("non-finite loss at step {step}: {breakdown}")]
    NonFinite { step: u64, breakdown: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, HtdError>;

impl HtdError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HtdError::Io { path: path.into(), source }
    }
}
