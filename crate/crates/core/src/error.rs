//! Crate-wide error type.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    /// Malformed scenario file (syntax level).
    #[error("parse error: {0}")]
    Parse(String),

    /// A scenario or parameter invariant does not hold. `invariant` names
    /// the violated rule, `detail` carries the offending value.
    #[error("validation error: {invariant}: {detail}")]
    Validation { invariant: String, detail: String },

    /// Routing failure (disconnected graph, unreachable target).
    #[error("routing error: {0}")]
    Routing(String),

    /// A simulation invariant broke mid-run; carries the frame number.
    #[error("runtime invariant violation at frame {frame}: {message}")]
    Runtime { frame: u64, message: String },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn validation(invariant: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Validation {
            invariant: invariant.into(),
            detail: detail.into(),
        }
    }

    pub fn runtime(frame: u64, message: impl Into<String>) -> Self {
        Error::Runtime {
            frame,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
