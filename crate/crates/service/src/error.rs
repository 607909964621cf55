use std::path::PathBuf;

use thiserror::Error;

use crate::phase::Phase;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("no such session: {0}")]
    UnknownSession(String),

    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("{op} is not allowed in phase {phase}")]
    PhaseConflict { op: &'static str, phase: Phase },

    #[error("a job is already running")]
    Busy,

    #[error("invalid request: {0}")]
    Validation(String),

    #[error("unsupported version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("checksum mismatch for {0}")]
    Checksum(String),

    #[error("adapter error: {0}")]
    Adapter(String),

    #[error(transparent)]
    Core(#[from] splatedit_core::Error),
}

impl ServiceError {
    /// Short machine-readable tag used in error bodies.
    pub fn kind(&self) -> &'static str {
        match self {
            ServiceError::UnknownSession(_) => "unknown_session",
            ServiceError::FileNotFound(_) => "not_found",
            ServiceError::PhaseConflict { .. } => "phase_conflict",
            ServiceError::Busy => "busy",
            ServiceError::Validation(_) => "validation",
            ServiceError::Version { .. } => "version",
            ServiceError::Checksum(_) => "checksum",
            ServiceError::Adapter(_) => "adapter",
            ServiceError::Core(e) => match e {
                splatedit_core::Error::Parse { .. } | splatedit_core::Error::Json(_) => "parse",
                splatedit_core::Error::Io { .. } => "io",
                _ => "pipeline",
            },
        }
    }

    /// Lifts missing-file I/O errors so callers can answer 404.
    pub(crate) fn from_load(e: splatedit_core::Error) -> Self {
        match e {
            splatedit_core::Error::Io { path, source } if source.kind() == std::io::ErrorKind::NotFound => ServiceError::FileNotFound(path),
            e => ServiceError::Core(e),
        }
    }
}

pub type ServiceResult<T> = std::result::Result<T, ServiceError>;

pub(crate) fn check_version(v: u32) -> ServiceResult<()> {
    if v != crate::api::API_VERSION {
        return Err(ServiceError::Version {
            found: v,
            expected: crate::api::API_VERSION,
        });
    }
    Ok(())
}
