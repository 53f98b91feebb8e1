use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by front-ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Diverged,
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch on {axis}: expected {expected}, found {found}")]
    Dimension {
        op: &'static str,
        axis: String,
        expected: String,
        found: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("confidence interval unavailable: {failed} of {attempted} resamples lacked a class")]
    CiUnavailable { failed: usize, attempted: usize },

    #[error("insufficient sample for segment {segment:?}: {count} windows, need at least {required}")]
    InsufficientSample {
        segment: String,
        count: usize,
        required: usize,
    },

    #[error("undefined similarity: {0}")]
    UndefinedSimilarity(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("learning-rate schedule exhausted: step {step} of {total}")]
    ScheduleExhausted { step: usize, total: usize },

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    #[error("corrupt data: {0}")]
    CorruptData(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(
        op: &'static str,
        axis: impl Into<String>,
        expected: impl ToString,
        found: impl ToString,
    ) -> Self {
        Error::Dimension {
            op,
            axis: axis.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::IncompatibleCheckpoint(_) | Error::ScheduleExhausted { .. } => {
                ErrorKind::Config
            }
            Error::Dimension { .. }
            | Error::Data(_)
            | Error::UndefinedMetric(_)
            | Error::CiUnavailable { .. }
            | Error::InsufficientSample { .. }
            | Error::UndefinedSimilarity(_)
            | Error::CorruptData(_)
            | Error::Format(_)
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_) => ErrorKind::Data,
            Error::Diverged { .. } => ErrorKind::Diverged,
            Error::Internal(_) => ErrorKind::Internal,
        }
    }
}
