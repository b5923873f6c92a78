//! Baselines and the reduced momentum methods.
//!
//! SGD with Nesterov momentum and RMSProp use coupled L2 weight decay
//! (`g + weight_decay * theta`). VRMomentum and Momentum keep the decoupled
//! decay of the Adam family.

use super::adam::damped_lr;
use super::{check_inputs, norm_pow, OptimError, OptimizerConfig, OptimizerState, StepOutcome};
use crate::vecops::norm_sq;

fn coupled(params: &[f64], grad: &[f64], wd: f64) -> Vec<f64> {
    grad.iter().zip(params).map(|(g, p)| g + wd * p).collect()
}

/// Nesterov momentum: `buf = mu * buf + g`, `theta -= lr * (g + mu * buf)`.
pub fn sgd_nesterov_step(
    params: &[f64],
    grad: &[f64],
    state: &mut OptimizerState,
    cfg: &OptimizerConfig,
    base_lr_scale: f64,
) -> Result<StepOutcome, OptimError> {
    check_inputs(params, grad, state)?;
    let lr = base_lr_scale * cfg.alpha0;
    let mu = cfg.sgd_momentum;
    let g = coupled(params, grad, cfg.weight_decay);
    let buf: Vec<f64> = state.v.iter().zip(&g).map(|(b, g)| mu * b + g).collect();
    let new_params = params
        .iter()
        .zip(g.iter().zip(&buf))
        .map(|(p, (g, b))| p - lr * (g + mu * b))
        .collect();
    let out = StepOutcome {
        new_params,
        effective_lr: lr,
        velocity_sq_norm: norm_sq(&buf),
        grad_sq_norm: norm_sq(grad),
    };
    state.v = buf;
    state.t += 1;
    Ok(out)
}

/// RMSProp with optional heavy-ball momentum on the normalized gradient.
pub fn rmsprop_step(
    params: &[f64],
    grad: &[f64],
    state: &mut OptimizerState,
    cfg: &OptimizerConfig,
    base_lr_scale: f64,
) -> Result<StepOutcome, OptimError> {
    check_inputs(params, grad, state)?;
    let lr = base_lr_scale * cfg.alpha0;
    let (alpha, mu) = (cfg.rmsprop_alpha, cfg.rmsprop_momentum);
    let g = coupled(params, grad, cfg.weight_decay);
    let m: Vec<f64> = state
        .m
        .iter()
        .zip(&g)
        .map(|(m, g)| alpha * m + (1.0 - alpha) * g * g)
        .collect();
    let normalized = g.iter().zip(&m).map(|(g, m)| g / (m.sqrt() + cfg.epsilon));
    let buf: Vec<f64> = if mu > 0.0 {
        state.v.iter().zip(normalized).map(|(b, n)| mu * b + n).collect()
    } else {
        normalized.collect()
    };
    let new_params = params.iter().zip(&buf).map(|(p, b)| p - lr * b).collect();
    let out = StepOutcome {
        new_params,
        effective_lr: lr,
        velocity_sq_norm: if mu > 0.0 { norm_sq(&buf) } else { 0.0 },
        grad_sq_norm: norm_sq(grad),
    };
    if mu > 0.0 {
        state.v = buf;
    }
    state.m = m;
    state.t += 1;
    Ok(out)
}

fn ema_momentum(
    params: &[f64],
    grad: &[f64],
    state: &mut OptimizerState,
    cfg: &OptimizerConfig,
    lr_of: impl FnOnce(&[f64]) -> Result<f64, OptimError>,
) -> Result<StepOutcome, OptimError> {
    check_inputs(params, grad, state)?;
    let b1 = cfg.beta1;
    let v: Vec<f64> = state
        .v
        .iter()
        .zip(grad)
        .map(|(v, g)| b1 * v + (1.0 - b1) * g)
        .collect();
    let lr = lr_of(&v)?;
    let decay = 1.0 - lr * cfg.weight_decay;
    let new_params = params
        .iter()
        .zip(&v)
        .map(|(p, v)| p * decay - lr * v)
        .collect();
    let out = StepOutcome {
        new_params,
        effective_lr: lr,
        velocity_sq_norm: norm_sq(&v),
        grad_sq_norm: norm_sq(grad),
    };
    state.v = v;
    state.t += 1;
    Ok(out)
}

/// VRAdam with the second moment fixed at one and no bias correction.
pub fn vrmomentum_step(
    params: &[f64],
    grad: &[f64],
    state: &mut OptimizerState,
    cfg: &OptimizerConfig,
    base_lr_scale: f64,
) -> Result<StepOutcome, OptimError> {
    let base = base_lr_scale * cfg.alpha0;
    ema_momentum(params, grad, state, cfg, |v| {
        let n = if cfg.normgrad {
            norm_pow(grad, cfg.power)
        } else {
            norm_pow(v, cfg.power)
        };
        damped_lr(base, n, cfg)
    })
}

pub fn momentum_step(
    params: &[f64],
    grad: &[f64],
    state: &mut OptimizerState,
    cfg: &OptimizerConfig,
    base_lr_scale: f64,
) -> Result<StepOutcome, OptimError> {
    let lr = base_lr_scale * cfg.alpha0;
    ema_momentum(params, grad, state, cfg, |_| Ok(lr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizers::Variant;
    use proptest::prelude::*;

    #[test]
    fn nesterov_hand_executed() {
        let mut cfg = OptimizerConfig::new(Variant::SgdNesterov, 0.1);
        cfg.sgd_momentum = 0.9;
        let mut state = OptimizerState::new(1);
        let o1 = sgd_nesterov_step(&[0.0], &[1.0], &mut state, &cfg, 1.0).unwrap();
        assert_eq!(state.v[0], 1.0);
        assert!((o1.new_params[0] + 0.19).abs() < 1e-15);
        let o2 = sgd_nesterov_step(&o1.new_params, &[1.0], &mut state, &cfg, 1.0).unwrap();
        assert!((state.v[0] - 1.9).abs() < 1e-15);
        assert!((o2.new_params[0] - o1.new_params[0] + 0.271).abs() < 1e-15);
    }

    #[test]
    fn nesterov_without_momentum_is_gd_with_l2() {
        let mut cfg = OptimizerConfig::new(Variant::SgdNesterov, 0.1);
        cfg.sgd_momentum = 0.0;
        cfg.weight_decay = 0.01;
        let mut state = OptimizerState::new(2);
        let p = [1.0, -3.0];
        let g = [0.5, 2.0];
        let out = sgd_nesterov_step(&p, &g, &mut state, &cfg, 1.0).unwrap();
        for i in 0..2 {
            assert!((out.new_params[i] - (p[i] - 0.1 * (g[i] + 0.01 * p[i]))).abs() < 1e-15);
        }
    }

    #[test]
    fn rmsprop_first_step() {
        let mut cfg = OptimizerConfig::new(Variant::RmsProp, 0.01);
        cfg.rmsprop_alpha = 0.99;
        for c in [3.0, -0.5] {
            let mut state = OptimizerState::new(1);
            let out = rmsprop_step(&[0.0], &[c], &mut state, &cfg, 1.0).unwrap();
            assert!((state.m[0] - 0.01 * c * c).abs() < 1e-15);
            let expected = -0.01 * c / (0.1 * f64::abs(c) + 1e-8);
            assert!((out.new_params[0] - expected).abs() < 1e-12);
            assert!((out.new_params[0] + 10.0 * 0.01 * c.signum()).abs() < 1e-6);
        }
    }

    #[test]
    fn rmsprop_degenerate_cases() {
        let mut cfg = OptimizerConfig::new(Variant::RmsProp, 0.01);
        let mut state = OptimizerState::new(2);
        let out = rmsprop_step(&[1.0, 2.0], &[0.0, 0.0], &mut state, &cfg, 1.0).unwrap();
        assert_eq!(out.new_params, vec![1.0, 2.0]);

        cfg.rmsprop_alpha = 0.0;
        let mut state = OptimizerState::new(2);
        let out = rmsprop_step(&[0.0, 0.0], &[4.0, -0.25], &mut state, &cfg, 1.0).unwrap();
        assert!((out.new_params[0] + 0.01).abs() < 1e-9);
        assert!((out.new_params[1] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn rmsprop_momentum_accumulates() {
        let mut cfg = OptimizerConfig::new(Variant::RmsProp, 0.01);
        cfg.rmsprop_alpha = 0.0;
        cfg.rmsprop_momentum = 0.5;
        let mut state = OptimizerState::new(1);
        let o1 = rmsprop_step(&[0.0], &[2.0], &mut state, &cfg, 1.0).unwrap();
        let o2 = rmsprop_step(&o1.new_params, &[2.0], &mut state, &cfg, 1.0).unwrap();
        // buf1 ~ 1, buf2 ~ 1.5
        assert!((o2.new_params[0] - o1.new_params[0] + 0.015).abs() < 1e-9);
    }

    #[test]
    fn vrmomentum_hand_executed() {
        let mut cfg = OptimizerConfig::new(Variant::VRMomentum, 0.5);
        cfg.beta1 = 0.1;
        cfg.beta3 = 3.0;
        cfg.alpha1 = 1e12;
        let mut state = OptimizerState::new(1);
        let out = vrmomentum_step(&[1.0], &[1.0], &mut state, &cfg, 1.0).unwrap();
        assert!((state.v[0] - 0.9).abs() < 1e-15);
        let lr = 0.5 / (1.0 + 3.0 * 0.81);
        assert!((out.effective_lr - lr).abs() < 1e-15);
        assert!((out.effective_lr - 0.14577).abs() < 1e-5);
        assert!((out.new_params[0] - (1.0 - lr * 0.9)).abs() < 1e-15);
        assert!((out.new_params[0] - 0.86881).abs() < 1e-5);
    }

    #[test]
    fn first_step_of_vrmomentum_is_not_larger() {
        let mut cfg = OptimizerConfig::new(Variant::VRMomentum, 0.5);
        cfg.beta1 = 0.5;
        cfg.beta3 = 1.0;
        let mut s1 = OptimizerState::new(1);
        let mut s2 = OptimizerState::new(1);
        let vr = vrmomentum_step(&[1.0], &[1.0], &mut s1, &cfg, 1.0).unwrap();
        let plain = momentum_step(&[1.0], &[1.0], &mut s2, &cfg, 1.0).unwrap();
        assert!((vr.new_params[0] - 1.0).abs() < (plain.new_params[0] - 1.0).abs());
    }

    proptest! {
        #[test]
        fn zero_beta3_vrmomentum_is_momentum(
            grads in proptest::collection::vec(-10.0f64..10.0, 1..30),
            alpha0 in 1e-3f64..1.0, beta1 in 0.0f64..0.99, wd in 0.0f64..0.1,
        ) {
            let cfg = OptimizerConfig { variant: Variant::VRMomentum, alpha0, beta1, beta3: 0.0,
                weight_decay: wd, ..OptimizerConfig::default() };
            let mut s1 = OptimizerState::new(1);
            let mut s2 = OptimizerState::new(1);
            let (mut p1, mut p2) = (vec![0.3], vec![0.3]);
            for g in grads {
                let a = vrmomentum_step(&p1, &[g], &mut s1, &cfg, 1.0).unwrap();
                let b = momentum_step(&p2, &[g], &mut s2, &cfg, 1.0).unwrap();
                prop_assert_eq!(&a, &b);
                p1 = a.new_params;
                p2 = b.new_params;
            }
        }
    }
}
