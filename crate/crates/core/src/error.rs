use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("center of pressure is undefined for a map with zero total force")]
    UndefinedCenterOfPressure,

    #[error("Otsu threshold is undefined for a constant map")]
    ConstantMap,

    #[error("metric `{0}` has no qualifying frames")]
    UndefinedMetric(&'static str),

    #[error("bead placement failed: {0}")]
    BeadPlacement(String),

    #[error("episode `{0}` already exists")]
    DuplicateEpisode(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
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
