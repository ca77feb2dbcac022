//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by solvers, measure constructors, and file formats.
#[derive(Debug, Error)]
pub enum Error {
    /// Two arrays that must agree in length or dimension do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A measure was given no support points.
    #[error("empty measure: {0}")]
    EmptyMeasure(String),

    /// Weights must be nonnegative and sum to one.
    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    /// A cost or input coordinate is NaN or infinite.
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    /// The exact solver reduces weighted problems to assignment by splitting
    /// particles over a common denominator; weights that need a denominator
    /// above the documented cap are rejected.
    #[error("weights are not rationals with denominator <= {cap}: {detail}")]
    IrrationalWeights { cap: u64, detail: String },

    /// Restricted couplings require the two y-marginals to match.
    #[error("infeasible restricted coupling: {0}")]
    InfeasibleRestrictedCoupling(String),

    /// Dual recovery was handed a plan whose cost is not optimal.
    #[error("coupling is not optimal: primal value {found:.9} exceeds optimum {optimum:.9} by more than {tol:.1e}")]
    NonOptimalCoupling { found: f64, optimum: f64, tol: f64 },

    /// A dual certificate failed verification (duality gap or a Lipschitz
    /// feasibility violation on a support pair).
    #[error("dual verification failed: {0}")]
    DualCheckFailed(String),

    /// A Monte Carlo proposition check came out outside its tolerance band.
    #[error("monte carlo check failed: {0}")]
    McCheckFailed(String),

    /// An invalid entropic regularisation parameter was supplied.
    #[error("invalid sinkhorn parameter: {0}")]
    InvalidParameter(String),

    /// Sinkhorn iterations stopped before reaching the requested tolerance.
    #[error("sinkhorn did not converge: sup-norm change {change:.3e} after {iterations} iterations (tolerance {tol:.3e})")]
    Unconverged {
        change: f64,
        iterations: usize,
        tol: f64,
    },

    /// An IDX image file had an unexpected magic number.
    #[error("bad idx magic: expected 0x{expected:08x}, found 0x{found:08x}")]
    IdxBadMagic { expected: u32, found: u32 },

    /// An IDX image file ended before the declared payload.
    #[error("truncated idx file: expected {expected} data bytes, found {found}")]
    IdxTruncated { expected: usize, found: usize },

    /// Declared IDX dimensions overflow addressable memory.
    #[error("idx dimensions overflow: {0}")]
    IdxOverflow(String),

    /// A checkpoint file is malformed or was written by an incompatible layout.
    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),

    /// A configuration value is out of range or inconsistent.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// JSON parse or serialisation failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
