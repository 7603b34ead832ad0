use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: invalid shape {shape:?} ({reason})")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: &'static str,
    },

    #[error("{op}: matrix is singular (condition estimate {cond:e})")]
    Singular { op: &'static str, cond: f64 },

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("non-finite gradient produced by `{op}`")]
    NonFiniteGradient { op: &'static str },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },

    #[error(
        "equilibrium solve did not converge (residual {residual:e} after {iterations} iterations)"
    )]
    EquilibriumNotConverged { residual: f64, iterations: usize },

    #[error("integration produced a non-finite state at step {step}")]
    IntegrationDiverged { step: usize },

    #[error("initial state violates the multi-focal region assumption (slack {slack:e} > 0)")]
    OutsideRegion { slack: f64 },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{path}: {err}")]
    Io { path: PathBuf, err: std::io::Error },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, err: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            err,
        }
    }
}
