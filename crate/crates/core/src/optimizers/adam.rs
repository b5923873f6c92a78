use super::{check_inputs, norm_pow, OptimError, OptimizerConfig, OptimizerState, StepOutcome};
use crate::vecops::norm_sq;

/// Velocity-damped learning rate `alpha0 / (1 + min(beta3 * norm_pow, alpha1))`.
///
/// `norm_pow` is the already exponentiated norm, `‖v‖^power` (or `‖g‖^power`
/// when `normgrad` is set).
pub fn dynamic_lr(norm_pow: f64, cfg: &OptimizerConfig) -> Result<f64, OptimError> {
    damped_lr(cfg.alpha0, norm_pow, cfg)
}

pub(crate) fn damped_lr(base: f64, norm_pow: f64, cfg: &OptimizerConfig) -> Result<f64, OptimError> {
    if !norm_pow.is_finite() {
        return Err(OptimError::NonFiniteNorm(norm_pow));
    }
    Ok(base / (1.0 + (cfg.beta3 * norm_pow).min(cfg.alpha1)))
}

fn bias_correction(beta: f64, t: u64) -> f64 {
    1.0 - beta.powi(t.min(i32::MAX as u64) as i32)
}

/// Shared Adam update. `lr_of` receives the new velocity and returns the
/// learning rate for this step; it runs before any state is committed.
fn adam_update(
    params: &[f64],
    grad: &[f64],
    state: &mut OptimizerState,
    cfg: &OptimizerConfig,
    lr_of: impl FnOnce(&[f64]) -> Result<f64, OptimError>,
) -> Result<StepOutcome, OptimError> {
    check_inputs(params, grad, state)?;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let v: Vec<f64> = state
        .v
        .iter()
        .zip(grad)
        .map(|(v, g)| b1 * v + (1.0 - b1) * g)
        .collect();
    let m: Vec<f64> = state
        .m
        .iter()
        .zip(grad)
        .map(|(m, g)| b2 * m + (1.0 - b2) * g * g)
        .collect();
    let lr = lr_of(&v)?;

    let t = state.t + 1;
    let bc1 = bias_correction(b1, t);
    let bc2 = bias_correction(b2, t);
    let decay = 1.0 - lr * cfg.weight_decay;
    let new_params = params
        .iter()
        .zip(v.iter().zip(&m))
        .map(|(p, (v, m))| {
            let v_hat = v / bc1;
            let m_hat = m / bc2;
            p * decay - lr * v_hat / (m_hat.sqrt() + cfg.epsilon)
        })
        .collect();

    let velocity_sq_norm = norm_sq(&v);
    state.t = t;
    state.v = v;
    state.m = m;
    Ok(StepOutcome {
        new_params,
        effective_lr: lr,
        velocity_sq_norm,
        grad_sq_norm: norm_sq(grad),
    })
}

/// One VRAdam step.
///
/// The damping norm is taken on the raw (not bias-corrected) velocity, in
/// the order velocity, second moment, learning rate, bias correction, update.
pub fn vradam_step(
    params: &[f64],
    grad: &[f64],
    state: &mut OptimizerState,
    cfg: &OptimizerConfig,
    base_lr_scale: f64,
) -> Result<StepOutcome, OptimError> {
    let base = base_lr_scale * cfg.alpha0;
    adam_update(params, grad, state, cfg, |v| {
        let n = if cfg.normgrad {
            norm_pow(grad, cfg.power)
        } else {
            norm_pow(v, cfg.power)
        };
        damped_lr(base, n, cfg)
    })
}

/// One AdamW step with constant learning rate `base_lr_scale * alpha0`.
pub fn adamw_step(
    params: &[f64],
    grad: &[f64],
    state: &mut OptimizerState,
    cfg: &OptimizerConfig,
    base_lr_scale: f64,
) -> Result<StepOutcome, OptimError> {
    let lr = base_lr_scale * cfg.alpha0;
    adam_update(params, grad, state, cfg, |_| Ok(lr))
}
