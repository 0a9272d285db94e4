//! Error types shared across the crate.

use thiserror::Error;

/// Everything that can go wrong while building or running a scenario.
#[derive(Debug, Error)]
pub enum EvoError {
    /// A caller broke a documented precondition (length mismatch,
    /// unnormalized input, parameter out of range).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A density lost all its mass (extinction or numerical collapse).
    #[error("degenerate state: {0}")]
    Degenerate(String),

    /// A scenario file or builder produced an unusable configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A hypothesis audit failed and the run was not forced.
    #[error("audit failure: {0}")]
    Audit(String),

    /// The explicit scheme produced a negative node or a NaN.
    #[error("numerical instability at step {step}: {reason}")]
    Instability { step: usize, reason: String },

    /// A modelled assumption (equilibrium existence, band membership,
    /// contraction condition) does not hold for the given inputs.
    #[error("assumption violated: {0}")]
    Assumption(String),

    /// An iterative solver ran out of iterations.
    #[error("no convergence: {0}")]
    NoConvergence(String),

    /// A population hit zero during integration.
    #[error("extinction at t = {time}: {what}")]
    Extinction { time: f64, what: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvoError>;
