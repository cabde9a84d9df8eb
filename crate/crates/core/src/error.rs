use std::path::PathBuf;

use thiserror::Error;

use crate::qp::SolveStatus;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: {what} has {actual} entries, expected {expected}")]
    Shape {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("keyframes {first} and {second} both map to grid index {index}")]
    KeyframeCollision {
        first: usize,
        second: usize,
        index: usize,
    },

    #[error("keyframe {keyframe} maps to stage {stage}, outside a grid of {n_stages} stages")]
    IndexOutOfGrid {
        keyframe: usize,
        stage: usize,
        n_stages: usize,
    },

    #[error("derivative order {order} needs at least {order} stages, grid has {n_stages}")]
    InsufficientHorizon { order: usize, n_stages: usize },

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("solver finished with status {status:?}: {detail}")]
    Solver { status: SolveStatus, detail: String },

    #[error("camera coincides with look-at target at stage {stage}")]
    SingularBearing { stage: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("{path}: {message}")]
    Validation { path: String, message: String },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Solver-side failures, as opposed to bad input.
    pub fn is_solver_failure(&self) -> bool {
        matches!(self, Error::Solver { .. })
    }
}
