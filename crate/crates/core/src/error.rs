use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid depth {0} (must be finite and > 0)")]
    InvalidDepth(f64),

    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("image too small: {width}x{height}, need at least {min}x{min}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        min: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no valid pixels remain after masking")]
    EmptyMask,

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate scene: ray through pixel ({u}, {v}) misses every plane")]
    DegenerateScene { u: f64, v: f64 },

    #[error("analytic mode required: {0}")]
    AnalyticModeRequired(String),

    #[error("{path}: parse error at byte {offset}: {message}")]
    Parse {
        path: PathBuf,
        offset: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
