use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("negative or non-finite weight {value} at ({row}, {col})")]
    NegativeWeight { row: usize, col: usize, value: f64 },

    #[error("adjacency diagonal must be zero, found {value} at index {index}")]
    NonZeroDiagonal { index: usize, value: f64 },

    #[error("graph is not strongly connected: agent {to} is unreachable from agent {from}")]
    NotStronglyConnected { from: usize, to: usize },

    #[error("invalid agent parameters: {0}")]
    InvalidParams(String),

    #[error("system matrix is numerically singular (condition estimate {condition:e})")]
    SingularSystem { condition: f64 },

    #[error("mixing matrix is not row-stochastic (max drift {drift:e})")]
    NotRowStochastic { drift: f64 },

    #[error("mixing matrix is degenerate (minimum singular value {sigma_min:e})")]
    DegenerateMixing { sigma_min: f64 },

    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("inadmissible control at agent {agent}: h*u = {value}")]
    InadmissibleControl { agent: usize, value: f64 },

    #[error("state left [0,1] at agent {agent}: {value}")]
    StateOutOfBox { agent: usize, value: f64 },

    #[error("control has zero contraction at agent {agent}")]
    ZeroControl { agent: usize },

    #[error("invalid rate schedule: {0}")]
    InvalidSchedule(String),

    #[error("agent {agent} is at the target; excitation is impossible")]
    AtTarget { agent: usize },

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("adaptation gain {psi} must be below 2/beta^2 = {limit}")]
    GainTooLarge { psi: f64, limit: f64 },

    #[error("invalid gain: {0}")]
    InvalidGain(String),

    #[error("cycle {cycle} stalled: {reason}")]
    StalledCycle { cycle: usize, reason: String },

    #[error("invalid config field `{field}`: {message}")]
    ConfigInvalid { field: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::ConfigInvalid {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 for configuration and IO problems,
    /// 2 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigInvalid { .. }
            | Error::Io { .. }
            | Error::Csv(_)
            | Error::Json(_)
            | Error::InvalidRange(_)
            | Error::InvalidParams(_)
            | Error::NotSquare { .. }
            | Error::DimensionMismatch { .. }
            | Error::NegativeWeight { .. }
            | Error::NonZeroDiagonal { .. }
            | Error::NotStronglyConnected { .. }
            | Error::InvalidSchedule(_)
            | Error::InvalidGain(_) => 1,
            _ => 2,
        }
    }
}
