use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the geometry, rendering, and training pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point is behind the camera (z = {z:.3e})")]
    BehindCamera { z: f64 },

    #[error("depth must be positive, got {depth}")]
    InvalidDepth { depth: f64 },

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("degenerate triangle at face {face} (area {area:.3e})")]
    DegenerateTriangle { face: usize, area: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("NaN gradient for gaussian {index}")]
    NanGradient { index: usize },

    #[error("unknown view id {id}; available ids: {available:?}")]
    UnknownView { id: usize, available: Vec<usize> },

    #[error("missing views: {ids:?}")]
    MissingViews { ids: Vec<usize> },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
