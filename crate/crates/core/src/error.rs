use thiserror::Error;

use crate::model::CellId;

/// Errors raised anywhere in the planning pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("cell {cell} is outside a grid of {num_cells} cells")]
    InvalidCell { cell: CellId, num_cells: usize },

    #[error("observation accuracy {0} must lie in (0.5, 1]")]
    InvalidAccuracy(f64),

    #[error("probability {value} for {what} must lie in [0, 1]")]
    InvalidProbability { what: &'static str, value: f64 },

    #[error("threshold {name}={value} must lie in [0, 1]")]
    InvalidThreshold { name: &'static str, value: f64 },

    #[error("observation has zero likelihood under the current belief (cell {cell})")]
    ImpossibleObservation { cell: CellId },

    #[error("planning horizon must be at least 1")]
    ZeroHorizon,

    #[error("truncation length {m} must lie in 1..={horizon}")]
    TruncationOutOfRange { m: usize, horizon: usize },

    #[error("candidate set is empty")]
    NoCandidates,

    #[error("record for agent {agent} at time {time} observes cell {cell}, but the trace places the agent at {expected:?}")]
    InconsistentRecord {
        agent: usize,
        time: u32,
        cell: CellId,
        expected: Option<CellId>,
    },

    #[error("records overlap at agent {agent}, time {time}")]
    OverlappingRecords { agent: usize, time: u32 },

    #[error("{0} unshared slots exceed the enumeration limit of {1}")]
    TooManySlots(usize, usize),

    #[error("state space of {0} cells is too large for exhaustive state enumeration")]
    StateSpaceTooLarge(usize),

    #[error("reward table has {found} entries, expected {expected}")]
    RewardTableShape { expected: usize, found: usize },

    #[error("the reuse path requires a state-dependent reward table")]
    UnsupportedReward,

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}
