use thiserror::Error;

use crate::gmdp::StateId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("map parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("environment is not communicating: state {} cannot reach state {}", .from.0, .to.0)]
    NotCommunicating { from: StateId, to: StateId },

    #[error("value iteration did not converge within {iterations} sweeps (last change {last_change:e})")]
    NoConvergence { iterations: usize, last_change: f64 },

    #[error("cannot store an empty trajectory")]
    EmptyTrajectory,

    #[error("dimension mismatch: {what} expects {expected} states, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
