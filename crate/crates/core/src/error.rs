use thiserror::Error;

/// Errors raised by the queue model, solvers and simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("state ({i}, {j}) is outside the triangular space of depth {depth}")]
    StateOutOfRange { i: usize, j: usize, depth: usize },

    #[error("linear index {index} is outside 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("I - U is singular at level {level}")]
    SingularBlock { level: usize },

    #[error("dense elimination broke down on a {size}x{size} system")]
    EliminationBreakdown { size: usize },

    #[error("relative residual {residual:e} exceeds tolerance {tolerance:e}")]
    Residual { residual: f64, tolerance: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("cross-check failed: {0}")]
    CrossCheck(String),

    #[error("simulation failed: {0}")]
    Simulation(String),
}

pub type Result<T> = std::result::Result<T, Error>;
