use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("infeasible mask: {0}")]
    InfeasibleMask(String),

    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    TrainingDiverged { iteration: usize, loss: f64 },

    #[error("non-finite value at level {level}, iteration {iteration}: {what}")]
    NumericFailure {
        level: usize,
        iteration: usize,
        what: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("convergence trace unavailable: no ground truth was supplied")]
    UnavailableTrace,

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("checkpoint mismatch in field `{field}`: file has {found}, expected {expected}")]
    CheckpointMismatch {
        field: &'static str,
        found: String,
        expected: String,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by non-finite numbers rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NumericFailure { .. } | Error::TrainingDiverged { .. }
        )
    }
}
