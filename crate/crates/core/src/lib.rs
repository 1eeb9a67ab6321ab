//! Contextual model-based relative entropy stochastic search (C-MORE).
//!
//! The crate learns a Gaussian search distribution `N(θ | b + K c, Q)` over
//! policy parameters conditioned on a context `c`. Each update fits a local
//! quadratic surrogate of the reward, optionally with a nuclear-norm penalty
//! on its context block so the model discovers a low-dimensional context
//! representation, and then solves a KL- and entropy-constrained update in
//! closed form.
//!
//! Module map:
//!
//! * [`model`]: the quadratic surrogate and its packed matrix form.
//! * [`fitting`]: ridge, nuclear-norm APG, PCA and cross-validation.
//! * [`policy`]: the Gaussian linear-in-context search distribution.
//! * [`solver`]: dual evaluation, dual minimization and the policy update.
//! * [`creps`]: the contextual REPS baseline.
//! * [`envs`]: benchmark environments.
//! * [`harness`]: experiment configuration, run loop, CSV and checkpoints.
//! * [`oracle`]: independent reference computations.
//! * [`checks`]: randomized comparisons of the fast paths against the oracles.

pub mod checks;
pub mod creps;
pub mod envs;
mod error;
pub mod fitting;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod policy;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};

pub use creps::{creps_dual, creps_update, CrepsConfig};
pub use envs::{ArmEnv, Environment, QuadraticCostEnv, Task};
pub use fitting::{
    cross_validate, fit_nuclear, fit_ridge, grad_j, pca_fit, project_nsd, svt, ApgConfig,
    PcaProjection, Sample, StepRule, SvtThreshold,
};
pub use harness::{run_experiment, ExperimentConfig, ReplayBuffer, RunRecord, RunRow};
pub use model::{effective_rank, pack_h, unpack_h, PackedModelMatrix, QuadraticModel};
pub use policy::{kl, GaussianLinearPolicy};
pub use solver::{
    dual_value, entropy_bound, minimize_dual, update_policy, DualIntermediates, DualSolution,
    SolverConfig,
};

/// Column vector of `f64`.
pub type Vector = nalgebra::DVector<f64>;
/// Dense column-major matrix of `f64`.
pub type Matrix = nalgebra::DMatrix<f64>;
