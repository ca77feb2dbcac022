//! Conditional optimal transport on empirical joint measures.
//!
//! The crate is organised around a single data type, [`measures::EmpiricalJoint`],
//! a weighted point cloud of `(y, x)` pairs. On top of it sit:
//!
//! * [`exact`]: exact Wasserstein-p solvers (p = 1, 2) on weighted point clouds,
//!   optimal couplings, and dual potentials recovered from a primal plan.
//! * [`conditional`]: the conditional distance, which only allows transport
//!   inside fibers of equal `y`. Includes the grouped solver, the projection /
//!   lifting bijection between glued plans and three-marginal plans, a dual
//!   certificate check, and Monte Carlo diagnostics for diagonal couplings.
//! * [`sinkhorn`]: log-domain entropic OT with optional epsilon annealing,
//!   the debiased divergence, and position gradients for generative training.
//! * [`generator`]: a small feed-forward conditional generator trained by
//!   minimising entropic divergences (or a pointwise baseline) between model
//!   and data batches, plus checkpointing and evaluation metrics.
//! * [`experiments`]: reproducible end-to-end runs shared by the command line
//!   front end and the acceptance tests.
//!
//! All randomness flows through [`rng::Rng`], a counter-derivable generator,
//! so every run is reproducible from one `u64` seed. Heavy loops are data
//! parallel via `rayon` when the default `parallel` feature is enabled and
//! fall back to sequential execution without it; both paths produce bitwise
//! identical results because reductions are always performed in a fixed order.

pub mod conditional;
pub mod cost;
pub mod error;
pub mod exact;
pub mod experiments;
pub mod generator;
pub mod idx;
pub mod measures;
pub mod par;
pub mod rng;
pub mod sinkhorn;

mod vecmath;

pub use error::{Error, Result};
