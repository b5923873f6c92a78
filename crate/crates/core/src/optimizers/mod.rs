//! Optimizers over flat parameter vectors.
//!
//! Every optimizer is a step function `(params, grad, state, cfg, scale)`
//! that returns the updated parameters together with the effective learning
//! rate it used. `scale` is the scheduler multiplier applied to the base
//! learning rate `alpha0` before anything else happens; for the
//! velocity-regularized variants the damping law then acts on the scaled
//! base.
//!
//! The [`Optimizer`] type bundles a config with its state and dispatches on
//! [`Variant`].

mod adam;
mod classic;
mod schedule;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

pub use adam::{adamw_step, dynamic_lr, vradam_step};
pub use classic::{momentum_step, rmsprop_step, sgd_nesterov_step, vrmomentum_step};
pub use schedule::{lr_scale, warmup_cosine_lr, ScheduleKind, SchedulerConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimError {
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error("invalid scheduler config: {0}")]
    InvalidSchedule(String),
    #[error("length mismatch: params {params}, grad {grad}, state {state}")]
    LengthMismatch {
        params: usize,
        grad: usize,
        state: usize,
    },
    #[error("non-finite gradient entry at index {index}")]
    NonFiniteGradient { index: usize },
    #[error("non-finite damping norm ({0}); the run diverged")]
    NonFiniteNorm(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[serde(rename = "vradam")]
    VRAdam,
    #[serde(rename = "adamw", alias = "adam")]
    AdamW,
    SgdNesterov,
    #[serde(rename = "rmsprop")]
    RmsProp,
    #[serde(rename = "vrmomentum")]
    VRMomentum,
    Momentum,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::VRAdam => "vradam",
            Variant::AdamW => "adamw",
            Variant::SgdNesterov => "sgd-nesterov",
            Variant::RmsProp => "rmsprop",
            Variant::VRMomentum => "vrmomentum",
            Variant::Momentum => "momentum",
        }
    }

    /// Whether the effective learning rate follows the velocity damping law.
    pub fn is_velocity_regularized(self) -> bool {
        matches!(self, Variant::VRAdam | Variant::VRMomentum)
    }
}

/// All hyperparameters of one optimizer.
///
/// Fields irrelevant to a variant are ignored by it (e.g. `beta3` for
/// AdamW, `rmsprop_alpha` for VRAdam).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub variant: Variant,
    /// Maximal (base) learning rate.
    pub alpha0: f64,
    /// Clip on the damping term; the minimal learning rate is
    /// `alpha0 / (1 + alpha1)`.
    #[serde(rename = "lr_cutoff", alias = "alpha1", deserialize_with = "lenient_f64")]
    pub alpha1: f64,
    /// EMA coefficient of the velocity (first moment).
    pub beta1: f64,
    /// EMA coefficient of the second moment.
    pub beta2: f64,
    /// Velocity penalizer.
    pub beta3: f64,
    /// Exponent applied to the Euclidean norm inside the damping law.
    pub power: u32,
    /// Damp on the instantaneous gradient norm instead of the velocity norm.
    pub normgrad: bool,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub sgd_momentum: f64,
    pub rmsprop_alpha: f64,
    pub rmsprop_momentum: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            variant: Variant::VRAdam,
            alpha0: 1e-3,
            alpha1: 19.0,
            beta1: 0.9,
            beta2: 0.999,
            beta3: 1.0,
            power: 2,
            normgrad: false,
            epsilon: 1e-8,
            weight_decay: 0.0,
            sgd_momentum: 0.9,
            rmsprop_alpha: 0.99,
            rmsprop_momentum: 0.0,
        }
    }
}

fn lenient_f64<'de, D: Deserializer<'de>>(de: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Num {
        Int(i64),
        Float(f64),
    }
    Ok(match Num::deserialize(de)? {
        Num::Int(i) => i as f64,
        Num::Float(f) => f,
    })
}

impl OptimizerConfig {
    pub fn new(variant: Variant, alpha0: f64) -> Self {
        Self {
            variant,
            alpha0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        let bad = |msg: String| Err(OptimError::InvalidConfig(msg));
        if !(self.alpha0 > 0.0 && self.alpha0.is_finite()) {
            return bad(format!("alpha0 must be positive and finite, got {}", self.alpha0));
        }
        if !(self.alpha1 > 0.0) {
            return bad(format!("lr_cutoff must be positive, got {}", self.alpha1));
        }
        for (name, b) in [
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("sgd_momentum", self.sgd_momentum),
            ("rmsprop_alpha", self.rmsprop_alpha),
            ("rmsprop_momentum", self.rmsprop_momentum),
        ] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.beta3 >= 0.0 && self.beta3.is_finite()) {
            return bad(format!("beta3 must be nonnegative, got {}", self.beta3));
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!(
                "weight_decay must be nonnegative, got {}",
                self.weight_decay
            ));
        }
        if self.power < 1 {
            return bad("power must be at least 1".into());
        }
        Ok(())
    }

    /// Smallest learning rate the damping law can produce at scale 1.
    pub fn min_lr(&self) -> f64 {
        self.alpha0 / (1.0 + self.alpha1)
    }
}

/// Step counter and moment buffers for one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub t: u64,
    /// Velocity / first moment (or momentum buffer for the classic methods).
    pub v: Vec<f64>,
    /// Second moment (square-average buffer for RMSProp).
    pub m: Vec<f64>,
}

impl OptimizerState {
    pub fn new(dim: usize) -> Self {
        Self {
            t: 0,
            v: vec![0.0; dim],
            m: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub new_params: Vec<f64>,
    pub effective_lr: f64,
    pub velocity_sq_norm: f64,
    pub grad_sq_norm: f64,
}

pub(crate) fn check_inputs(
    params: &[f64],
    grad: &[f64],
    state: &OptimizerState,
) -> Result<(), OptimError> {
    if params.len() != grad.len() || state.v.len() != params.len() || state.m.len() != params.len()
    {
        return Err(OptimError::LengthMismatch {
            params: params.len(),
            grad: grad.len(),
            state: state.v.len().min(state.m.len()),
        });
    }
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(OptimError::NonFiniteGradient { index });
    }
    Ok(())
}

/// `‖x‖^power`, computed without a square root for even powers.
pub(crate) fn norm_pow(x: &[f64], power: u32) -> f64 {
    let sq = crate::vecops::norm_sq(x);
    if power.is_multiple_of(2) {
        sq.powi((power / 2) as i32)
    } else {
        sq.sqrt().powi(power as i32)
    }
}

/// A config bundled with its state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    state: OptimizerState,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, dim: usize) -> Result<Self, OptimError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            state: OptimizerState::new(dim),
        })
    }

    /// Resumes from a saved state.
    pub fn with_state(cfg: OptimizerConfig, state: OptimizerState) -> Result<Self, OptimError> {
        cfg.validate()?;
        if state.v.len() != state.m.len() {
            return Err(OptimError::LengthMismatch { params: state.v.len(), grad: state.v.len(), state: state.m.len() });
        }
        Ok(Self { cfg, state })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    /// Applies one step in place. On error neither `params` nor the state
    /// are touched.
    pub fn step(
        &mut self,
        params: &mut Vec<f64>,
        grad: &[f64],
        base_lr_scale: f64,
    ) -> Result<StepOutcome, OptimError> {
        let out = step_with(self.cfg.variant, params, grad, &mut self.state, &self.cfg, base_lr_scale)?;
        params.clone_from(&out.new_params);
        Ok(out)
    }

    /// Second-moment estimate the last update divided by: the
    /// bias-corrected `m_hat` for the Adam family, the raw square average
    /// for RMSProp, `None` for unpreconditioned methods. The preconditioner
    /// is `diag(sqrt(moment) + epsilon)`.
    pub fn preconditioner_moment(&self) -> Option<Vec<f64>> {
        match self.cfg.variant {
            Variant::VRAdam | Variant::AdamW => {
                let t = self.state.t.max(1);
                let bc = 1.0 - self.cfg.beta2.powi(t.min(i32::MAX as u64) as i32);
                Some(self.state.m.iter().map(|m| m / bc).collect())
            }
            Variant::RmsProp => Some(self.state.m.clone()),
            _ => None,
        }
    }

    /// Momentum coefficient that enters the stability threshold
    /// `(2 + 2b) / ((1 - b) eta)`.
    pub fn stability_beta(&self) -> f64 {
        match self.cfg.variant {
            Variant::VRAdam | Variant::AdamW | Variant::VRMomentum | Variant::Momentum => {
                self.cfg.beta1
            }
            Variant::SgdNesterov | Variant::RmsProp => 0.0,
        }
    }
}

/// Dispatches to the step function of `variant`.
pub fn step_with(
    variant: Variant,
    params: &[f64],
    grad: &[f64],
    state: &mut OptimizerState,
    cfg: &OptimizerConfig,
    base_lr_scale: f64,
) -> Result<StepOutcome, OptimError> {
    match variant {
        Variant::VRAdam => vradam_step(params, grad, state, cfg, base_lr_scale),
        Variant::AdamW => adamw_step(params, grad, state, cfg, base_lr_scale),
        Variant::SgdNesterov => sgd_nesterov_step(params, grad, state, cfg, base_lr_scale),
        Variant::RmsProp => rmsprop_step(params, grad, state, cfg, base_lr_scale),
        Variant::VRMomentum => vrmomentum_step(params, grad, state, cfg, base_lr_scale),
        Variant::Momentum => momentum_step(params, grad, state, cfg, base_lr_scale),
    }
}
