//! Velocity-regularized Adam (VRAdam) and friends.
//!
//! The crate is split into five layers:
//!
//! - [`optimizers`]: VRAdam, AdamW, SGD with Nesterov momentum, RMSProp,
//!   VRMomentum and Momentum as step functions over flat parameter vectors,
//!   plus the warmup-cosine learning-rate schedule.
//! - [`dynamics`]: the continuous quartic-kinetic Lagrangian flow that the
//!   velocity-regularized learning rate comes from, with RK4 integration,
//!   the conserved energy and phase-portrait sampling.
//! - [`probes`]: finite-difference Hessian-vector products, preconditioned
//!   power iteration and the (adaptive) edge-of-stability thresholds.
//! - [`models`]: analytic objectives, a hand-written MLP, synthetic datasets
//!   and an IDX loader.
//! - [`harness`]: experiment configs, the seeded training loop, random
//!   search, trace emission and shipped presets.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod dynamics;
pub mod harness;
pub mod models;
pub mod optimizers;
pub mod probes;
pub mod vecops;

pub use dynamics::{KineticConfig, PhaseState};
pub use models::{Dataset, Objective};
pub use optimizers::{
    OptimError, Optimizer, OptimizerConfig, OptimizerState, SchedulerConfig, StepOutcome, Variant,
};
pub use probes::SharpnessEstimate;
