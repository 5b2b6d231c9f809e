use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, IngestError>;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Core(#[from] germap_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad tile source: {0}")]
    Source(String),

    #[error("{path}: column `{column}`: {reason}")]
    Schema {
        path: PathBuf,
        column: String,
        reason: String,
    },

    #[error("{path}: row {row}: {reason}")]
    Row { path: PathBuf, row: usize, reason: String },

    #[error("{path}: not valid GeoJSON: {reason}")]
    GeoJson { path: PathBuf, reason: String },

    #[error("http client: {0}")]
    Client(#[from] reqwest::Error),
}

impl IngestError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.into(),
            source,
        }
    }
}
