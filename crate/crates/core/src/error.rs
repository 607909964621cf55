use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("non-finite parameter on splat {index}")]
    NonFiniteSplat { index: usize },

    #[error("render contract violated: {0}")]
    Contract(String),

    #[error("empty mask")]
    EmptyMask,

    #[error("empty selection: {0}")]
    EmptySelection(String),

    #[error("segmentation did not propagate: every view was skipped")]
    NoPropagation,

    #[error("mask oracle failed on view {view}: {message}")]
    Oracle { view: usize, message: String },

    #[error("image cannot be inpainted: {0}")]
    Uninpaintable(String),

    #[error("degenerate loss: {0}")]
    DegenerateLoss(String),

    #[error("optimization diverged at step {step}")]
    Diverged { step: usize },

    #[error("external backend failed: {0}")]
    Backend(String),

    #[error("invalid synthetic scene description: {0}")]
    InvalidSpec(String),

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

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
