//! Sharpness probes: finite-difference Hessian-vector products, power
//! iteration on the (preconditioned) Hessian, and stability thresholds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{ModelError, Objective};
use crate::optimizers::{OptimError, Optimizer, OptimizerConfig};
use crate::vecops::{add_scaled, all_finite, dot, norm, scale};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("non-finite gradient during a Hessian-vector product")]
    NonFiniteGradient,
    #[error("direction has zero norm")]
    ZeroDirection,
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("invalid probe config: {0}")]
    InvalidConfig(String),
    #[error("stability threshold undefined for beta1 = {beta1}, eta = {eta}")]
    UndefinedThreshold { beta1: f64, eta: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optimizer(#[from] OptimError),
}

/// Result of one power iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct SharpnessEstimate {
    pub lambda_max: f64,
    pub iterations_used: usize,
    /// Relative change of the Rayleigh quotient in the last iteration.
    pub residual: f64,
    pub converged: bool,
    /// Final unit iterate, reusable as a warm start.
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerIterConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for PowerIterConfig {
    fn default() -> Self {
        Self { max_iters: 100, tol: 1e-4, seed: 0 }
    }
}

/// Default finite-difference step `1e-4 (1 + |theta|)`.
pub fn default_fd_step(theta: &[f64]) -> f64 {
    1e-4 * (1.0 + norm(theta))
}

/// Central-difference Hessian-vector product
/// `(g(theta + h u) - g(theta - h u)) / (2h) * |d|` with `u = d / |d|`.
pub fn hvp<G>(grad: G, theta: &[f64], direction: &[f64], h: f64) -> Result<Vec<f64>, ProbeError>
where
    G: Fn(&[f64]) -> Result<Vec<f64>, ProbeError>,
{
    if direction.len() != theta.len() {
        return Err(ProbeError::LengthMismatch { expected: theta.len(), found: direction.len() });
    }
    if !(h > 0.0) {
        return Err(ProbeError::InvalidConfig(format!("fd step must be positive, got {h}")));
    }
    let len = norm(direction);
    if len == 0.0 {
        return Err(ProbeError::ZeroDirection);
    }
    let unit = scale(direction, 1.0 / len);
    let gp = grad(&add_scaled(theta, h, &unit))?;
    let gm = grad(&add_scaled(theta, -h, &unit))?;
    if !all_finite(&gp) || !all_finite(&gm) {
        return Err(ProbeError::NonFiniteGradient);
    }
    let c = len / (2.0 * h);
    Ok(gp.iter().zip(&gm).map(|(a, b)| (a - b) * c).collect())
}

fn random_unit(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 0.0 {
            return scale(&v, 1.0 / n);
        }
    }
}

/// Power iteration on `u -> P^-1 H u` with `P = diag(sqrt(m) + eps)`.
///
/// The zero moment with `eps = 1` gives the plain Hessian. The map is not
/// symmetrized; a run that has not settled within `max_iters` comes back
/// with `converged == false` and its last residual.
pub fn preconditioned_power_iteration<H>(
    mut hvp_fn: H,
    precond_m: &[f64],
    eps: f64,
    cfg: &PowerIterConfig,
    warm_start: Option<&[f64]>,
) -> Result<SharpnessEstimate, ProbeError>
where
    H: FnMut(&[f64]) -> Result<Vec<f64>, ProbeError>,
{
    let dim = precond_m.len();
    if cfg.max_iters == 0 || !(cfg.tol > 0.0) {
        return Err(ProbeError::InvalidConfig("max_iters and tol must be positive".into()));
    }
    if !(eps > 0.0) || precond_m.iter().any(|m| !(*m >= 0.0)) {
        return Err(ProbeError::InvalidConfig("preconditioner must be nonnegative with eps > 0".into()));
    }
    let inv_p: Vec<f64> = precond_m.iter().map(|m| 1.0 / (m.sqrt() + eps)).collect();
    let mut u = match warm_start {
        Some(w) if w.len() == dim && norm(w) > 0.0 && all_finite(w) => scale(w, 1.0 / norm(w)),
        _ => random_unit(dim, cfg.seed),
    };
    let mut lambda = f64::NAN;
    let mut residual = f64::INFINITY;
    for it in 1..=cfg.max_iters {
        let hu = hvp_fn(&u)?;
        if hu.len() != dim {
            return Err(ProbeError::LengthMismatch { expected: dim, found: hu.len() });
        }
        let w: Vec<f64> = hu.iter().zip(&inv_p).map(|(h, p)| h * p).collect();
        if !all_finite(&w) {
            return Err(ProbeError::NonFiniteGradient);
        }
        let next = dot(&u, &w);
        residual = if lambda.is_nan() {
            f64::INFINITY
        } else {
            (next - lambda).abs() / next.abs().max(f64::MIN_POSITIVE)
        };
        lambda = next;
        let wn = norm(&w);
        if wn == 0.0 {
            return Ok(SharpnessEstimate { lambda_max: 0.0, iterations_used: it, residual: 0.0, converged: true, vector: u });
        }
        u = scale(&w, 1.0 / wn);
        if residual < cfg.tol {
            return Ok(SharpnessEstimate { lambda_max: lambda, iterations_used: it, residual, converged: true, vector: u });
        }
    }
    Ok(SharpnessEstimate {
        lambda_max: lambda,
        iterations_used: cfg.max_iters,
        residual,
        converged: false,
        vector: u,
    })
}

/// Adaptive edge-of-stability bound `(2 + 2 beta1) / ((1 - beta1) eta)`.
/// With `beta1 = 0` this is the gradient-descent bound `2 / eta`.
pub fn aeos_threshold(beta1: f64, eta: f64) -> Result<f64, ProbeError> {
    if !(0.0..1.0).contains(&beta1) || !(eta > 0.0 && eta.is_finite()) {
        return Err(ProbeError::UndefinedThreshold { beta1, eta });
    }
    let factor = (2.0 + 2.0 * beta1) / (1.0 - beta1);
    Ok(factor / eta)
}

/// Probe settings as they appear in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub enabled: bool,
    pub every: usize,
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
    /// Finite-difference step; `None` uses [`default_fd_step`].
    pub fd_step: Option<f64>,
    /// Use the optimizer's preconditioner; otherwise probe the plain Hessian.
    pub preconditioned: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            every: 10,
            tol: 1e-4,
            max_iters: 100,
            seed: 0,
            fd_step: None,
            preconditioned: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReading {
    pub lambda_max: f64,
    pub threshold: f64,
    pub estimate: SharpnessEstimate,
}

/// Stateful probe that warm-starts each power iteration from the last one.
#[derive(Debug, Clone)]
pub struct SharpnessProbe {
    cfg: ProbeConfig,
    warm: Option<Vec<f64>>,
}

impl SharpnessProbe {
    pub fn new(cfg: ProbeConfig) -> Result<Self, ProbeError> {
        if cfg.every == 0 {
            return Err(ProbeError::InvalidConfig("probe interval must be at least 1".into()));
        }
        Ok(Self { cfg, warm: None })
    }

    pub fn config(&self) -> &ProbeConfig {
        &self.cfg
    }

    pub fn due(&self, step: u64) -> bool {
        self.cfg.enabled && step.is_multiple_of(self.cfg.every as u64)
    }

    /// Measures `lambda_max(P^-1 H)` at `theta` using the optimizer's live
    /// second moment, and the threshold for learning rate `eta`. Before the
    /// first step there is no moment and the plain Hessian is probed.
    pub fn measure(
        &mut self,
        obj: &dyn Objective,
        theta: &[f64],
        batch: Option<&[usize]>,
        optimizer: &Optimizer,
        eta: f64,
    ) -> Result<ProbeReading, ProbeError> {
        let dim = theta.len();
        let (moment, eps) = match (self.cfg.preconditioned, optimizer.preconditioner_moment()) {
            (true, Some(m)) if optimizer.state().t > 0 => (m, optimizer.config().epsilon),
            _ => (vec![0.0; dim], 1.0),
        };
        let h = self.cfg.fd_step.unwrap_or_else(|| default_fd_step(theta));
        let grad = |p: &[f64]| obj.grad(p, batch).map_err(ProbeError::from);
        let pcfg = PowerIterConfig { max_iters: self.cfg.max_iters, tol: self.cfg.tol, seed: self.cfg.seed };
        let est = preconditioned_power_iteration(
            |u| hvp(grad, theta, u, h),
            &moment,
            eps,
            &pcfg,
            self.warm.as_deref(),
        )?;
        self.warm = Some(est.vector.clone());
        let threshold = aeos_threshold(optimizer.stability_beta(), eta)?;
        Ok(ProbeReading { lambda_max: est.lambda_max, threshold, estimate: est })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharpnessPoint {
    pub step: u64,
    pub lambda_max: f64,
    pub effective_lr: f64,
    pub threshold: f64,
}

/// Runs `steps` full-batch optimizer steps from `theta0` and probes every
/// `probe.every` steps after the update.
pub fn sharpness_trace(
    obj: &dyn Objective,
    cfg: &OptimizerConfig,
    theta0: &[f64],
    steps: u64,
    probe: &ProbeConfig,
) -> Result<Vec<SharpnessPoint>, ProbeError> {
    let mut opt = Optimizer::new(cfg.clone(), theta0.len())?;
    let mut probe = SharpnessProbe::new(ProbeConfig { enabled: true, ..probe.clone() })?;
    let mut theta = theta0.to_vec();
    let mut out = Vec::new();
    for step in 1..=steps {
        let g = obj.grad(&theta, None)?;
        let o = opt.step(&mut theta, &g, 1.0)?;
        if probe.due(step) {
            let r = probe.measure(obj, &theta, None, &opt, o.effective_lr)?;
            out.push(SharpnessPoint { step, lambda_max: r.lambda_max, effective_lr: o.effective_lr, threshold: r.threshold });
        }
    }
    Ok(out)
}
