use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::OptimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    #[default]
    Constant,
    #[serde(alias = "warmup-cosine")]
    WarmupCosineAnnealing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    pub kind: ScheduleKind,
    pub warmup_epochs: u32,
    pub warmup_factor: f64,
    pub eta_min: f64,
    /// Zero means "use the run's epoch budget".
    pub total_epochs: u32,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Constant,
            warmup_epochs: 5,
            warmup_factor: 0.1,
            eta_min: 1e-5,
            total_epochs: 0,
        }
    }
}

impl SchedulerConfig {
    pub fn warmup_cosine(warmup_epochs: u32, warmup_factor: f64, eta_min: f64, total_epochs: u32) -> Self {
        Self {
            kind: ScheduleKind::WarmupCosineAnnealing,
            warmup_epochs,
            warmup_factor,
            eta_min,
            total_epochs,
        }
    }

    pub fn validate(&self, base_lr: f64) -> Result<(), OptimError> {
        if self.kind == ScheduleKind::Constant {
            return Ok(());
        }
        let bad = |m: String| Err(OptimError::InvalidSchedule(m));
        // zero total_epochs is resolved to the run budget by the caller
        if self.total_epochs > 0 && self.warmup_epochs >= self.total_epochs {
            return bad(format!(
                "warmup_epochs ({}) must be below total_epochs ({})",
                self.warmup_epochs, self.total_epochs
            ));
        }
        if !(self.warmup_factor > 0.0 && self.warmup_factor <= 1.0) {
            return bad(format!("warmup_factor must lie in (0, 1], got {}", self.warmup_factor));
        }
        if !(self.eta_min >= 0.0 && self.eta_min.is_finite()) {
            return bad(format!("eta_min must be nonnegative, got {}", self.eta_min));
        }
        if !(base_lr > 0.0) {
            return bad(format!("base lr must be positive, got {base_lr}"));
        }
        Ok(())
    }
}

/// Linear warmup from `warmup_factor * base_lr` to `base_lr` over
/// `warmup_epochs`, then cosine decay reaching `eta_min` at the last epoch.
pub fn warmup_cosine_lr(epoch: u32, base_lr: f64, sch: &SchedulerConfig) -> Result<f64, OptimError> {
    let mut sch = sch.clone();
    sch.kind = ScheduleKind::WarmupCosineAnnealing;
    sch.validate(base_lr)?;
    if sch.total_epochs == 0 {
        return Err(OptimError::InvalidSchedule("total_epochs is unresolved".into()));
    }
    if epoch >= sch.total_epochs {
        return Err(OptimError::InvalidSchedule(format!(
            "epoch {epoch} is past the schedule end ({})",
            sch.total_epochs
        )));
    }
    let w = sch.warmup_epochs;
    if epoch < w {
        let frac = epoch as f64 / w as f64;
        return Ok(base_lr * (sch.warmup_factor + (1.0 - sch.warmup_factor) * frac));
    }
    let span = sch.total_epochs - 1 - w;
    if span == 0 {
        return Ok(base_lr);
    }
    let progress = (epoch - w) as f64 / span as f64;
    Ok(sch.eta_min + (base_lr - sch.eta_min) * 0.5 * (1.0 + (PI * progress).cos()))
}

/// Scheduler multiplier applied to `alpha0` at `epoch`.
pub fn lr_scale(epoch: u32, alpha0: f64, sch: &SchedulerConfig) -> Result<f64, OptimError> {
    match sch.kind {
        ScheduleKind::Constant => Ok(1.0),
        ScheduleKind::WarmupCosineAnnealing => Ok(warmup_cosine_lr(epoch, alpha0, sch)? / alpha0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> SchedulerConfig {
        SchedulerConfig::warmup_cosine(5, 0.1, 1e-5, 100)
    }

    #[test]
    fn endpoints() {
        let base = 0.0846;
        let s = table();
        assert!((warmup_cosine_lr(0, base, &s).unwrap() - 0.1 * base).abs() < 1e-17);
        assert_eq!(warmup_cosine_lr(5, base, &s).unwrap(), base);
        assert!((warmup_cosine_lr(99, base, &s).unwrap() - 1e-5).abs() < 1e-17);
        assert!(warmup_cosine_lr(100, base, &s).is_err());
    }

    #[test]
    fn warmup_is_linear_and_decay_is_monotone() {
        let base = 1.0;
        let s = table();
        let lrs: Vec<f64> = (0..100).map(|e| warmup_cosine_lr(e, base, &s).unwrap()).collect();
        for e in 0..5 {
            assert!((lrs[e + 1] - lrs[e] - 0.9 / 5.0).abs() < 1e-12);
        }
        for e in 5..99 {
            assert!(lrs[e + 1] < lrs[e]);
        }
        // midpoint of the cosine
        let mid = warmup_cosine_lr(5 + 47, base, &s).unwrap();
        assert!((mid - (1e-5 + (1.0 - 1e-5) * 0.5)).abs() < 1e-12);
    }

    #[test]
    fn invalid_configs() {
        let mut s = table();
        s.warmup_epochs = 100;
        assert!(warmup_cosine_lr(0, 1.0, &s).is_err());
        let mut s = table();
        assert!(warmup_cosine_lr(0, 0.0, &s).is_err());
        s.eta_min = -1.0;
        assert!(warmup_cosine_lr(0, 1.0, &s).is_err());
        s.total_epochs = 0;
        s.eta_min = 0.0;
        assert!(warmup_cosine_lr(0, 1.0, &s).is_err());
    }

    #[test]
    fn floor_above_base_still_ends_at_floor() {
        let s = table();
        assert!((warmup_cosine_lr(5, 1e-6, &s).unwrap() - 1e-6).abs() < 1e-18);
        assert!((warmup_cosine_lr(99, 1e-6, &s).unwrap() - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn constant_scale_is_one() {
        assert_eq!(lr_scale(7, 0.3, &SchedulerConfig::default()).unwrap(), 1.0);
        let s = table();
        assert!((lr_scale(0, 0.2, &s).unwrap() - 0.1).abs() < 1e-15);
    }
}
