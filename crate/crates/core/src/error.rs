use thiserror::Error;

pub type Result<T, E = QsdError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QsdError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("step size dt = {dt} violates {constraint}")]
    StepSize { dt: f64, constraint: &'static str },

    #[error("state is not normalized (norm = {norm})")]
    Unnormalized { norm: f64 },

    #[error("norm collapsed to {norm:e} at time index {time_index}")]
    NormCollapse { norm: f64, time_index: usize },

    #[error("non-finite value in {what} at time index {time_index}")]
    NonFinite {
        what: &'static str,
        time_index: usize,
    },

    #[error("unnormalized norm overflowed ({norm:e}) at time index {time_index}")]
    NormOverflow { norm: f64, time_index: usize },

    #[error("invalid density matrix: {0}")]
    InvalidDensityMatrix(String),

    #[error("master equation tolerance violated at time index {time_index}: {reason}")]
    MasterEquation { time_index: usize, reason: String },

    #[error("mismatched time grids")]
    GridMismatch,

    #[error("not enough samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("trajectory (stream {stream_index}) failed at time index {time_index}: {reason}")]
    Trajectory {
        stream_index: u64,
        time_index: usize,
        reason: String,
    },

    #[error("{failed} of {total} trajectories aborted (more than 1%)")]
    TooManyFailures { failed: usize, total: usize },
}
