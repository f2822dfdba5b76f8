use std::fmt;

use thiserror::Error;

use crate::nn::FieldMode;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("model mode mismatch: expected {expected}, got {actual}")]
    ModeMismatch { expected: FieldMode, actual: FieldMode },

    #[error("backward called without a recorded forward pass")]
    NoForwardTrace,

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse grouping used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Io,
    Numeric,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Io(_) | Error::Format(_) | Error::Json(_) => ErrorCategory::Io,
            Error::NonFinite(_) => ErrorCategory::Numeric,
            Error::Shape(_)
            | Error::InvalidArgument(_)
            | Error::ModeMismatch { .. }
            | Error::NoForwardTrace => ErrorCategory::Usage,
        }
    }

    pub(crate) fn shape(msg: impl fmt::Display) -> Self {
        Error::Shape(msg.to_string())
    }

    pub(crate) fn invalid(msg: impl fmt::Display) -> Self {
        Error::InvalidArgument(msg.to_string())
    }

    pub(crate) fn format(msg: impl fmt::Display) -> Self {
        Error::Format(msg.to_string())
    }
}
