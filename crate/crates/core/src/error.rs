use thiserror::Error;

use crate::rd_solver::RdPoint;

/// Errors raised across the solvers, bound evaluators and simulators.
#[derive(Debug, Error)]
pub enum RdError {
    /// Malformed argument or a value outside its domain.
    #[error("input error: {0}")]
    Input(String),

    /// A container failed one of its structural invariants.
    #[error("invariant violated ({invariant}): {detail}")]
    Invariant {
        invariant: &'static str,
        detail: String,
    },

    /// Blahut-Arimoto did not reach the requested tolerance.
    #[error("no convergence after {iterations} iterations (last gap {gap:e})")]
    Convergence {
        iterations: usize,
        gap: f64,
        last: Box<RdPoint>,
    },

    /// The distortion constraint cannot be met by any channel.
    #[error("infeasible constraint {requested}: achievable expected distortion lies in [{min}, {max}]")]
    Infeasible {
        requested: String,
        min: f64,
        max: f64,
    },

    /// Enumeration or codebook too large for the exact path.
    #[error("size limit exceeded: {what} = {size} > {limit}")]
    Size {
        what: &'static str,
        size: f64,
        limit: f64,
    },

    /// Bracketing failed for an implicit equation.
    #[error("no root bracket found while scanning [{lo}, {hi}]")]
    RootSolve { lo: f64, hi: f64 },
}

pub type Result<T> = std::result::Result<T, RdError>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(RdError::Input(msg.into()))
}
