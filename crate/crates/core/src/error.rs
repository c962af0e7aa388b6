use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("treatment {0} has no group in the supplied assignment")]
    UngroupedTreatment(usize),

    #[error("no observations at stage {0}")]
    NoObservations(usize),

    #[error("co-occurrence matrix is empty; nothing to embed")]
    EmptyCooccurrence,

    #[error("least squares requires at least one row")]
    EmptyDesign,

    #[error("policy returned an invalid plan: {0}")]
    InvalidPlan(String),

    #[error("i/o error on {path}: {source}")]
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
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
