use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = TasError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TasError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// `J(0)` is not invertible at the current level.
    #[error("rank-deficient channel: {level} selected antenna(s) cannot support zero forcing for {users} user(s)")]
    RankDeficient { level: usize, users: usize },

    #[error("degenerate channel: selected rows carry no energy")]
    DegenerateChannel,

    /// A rank-one update lost positive definiteness; the caller should
    /// rebuild the precoder from scratch.
    #[error("numerical degeneracy in rank-one update ({0}); fall back to direct recomputation")]
    NumericalDegeneracy(String),

    #[error("energy efficiency undefined: consumed power is zero")]
    ZeroConsumedPower,

    #[error("no candidate antennas remain")]
    Exhausted,

    #[error("exhaustive search needs {required} subsets, budget is {budget}")]
    BudgetExceeded { required: u128, budget: u128 },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("malformed field `{field}`: {message}")]
    Schema { field: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("trial {trial} (channel seed {seed}) failed: {source}")]
    TrialFailed {
        trial: usize,
        seed: u64,
        #[source]
        source: Box<TasError>,
    },
}

impl TasError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        TasError::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TasError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn from_json(err: &serde_json::Error) -> Self {
        TasError::Parse {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}
