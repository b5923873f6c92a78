//! Continuous dynamics of the quartic-kinetic Lagrangian
//! `L(x, v) = m|v|^2/2 + beta3 |v|^4/4 - V(x)`.
//!
//! The flow integrated here is `x' = v`, `v' = -grad V(x) / (m + 3 beta3 |v|^2)`
//! with a scalar denominator shared by every component. Along this flow the
//! energy `m|v|^2/2 + 3 beta3 |v|^4/4 + V(x)` is exactly conserved.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optimizers::{step_with, OptimError, OptimizerConfig, OptimizerState};
use crate::vecops::{all_finite, dot, norm_sq};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("position and velocity lengths differ ({x} vs {v})")]
    LengthMismatch { x: usize, v: usize },
    #[error("non-finite value in the {0}")]
    NonFinite(&'static str),
    #[error("invalid kinetic config: {0}")]
    InvalidConfig(String),
    #[error("phase portraits need a 1-D state, got dimension {0}")]
    NotOneDimensional(usize),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Optimizer(#[from] OptimError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl PhaseState {
    pub fn new(x: Vec<f64>, v: Vec<f64>) -> Result<Self, DynamicsError> {
        let s = Self { x, v };
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<(), DynamicsError> {
        if self.x.len() != self.v.len() {
            return Err(DynamicsError::LengthMismatch { x: self.x.len(), v: self.v.len() });
        }
        if !all_finite(&self.x) || !all_finite(&self.v) {
            return Err(DynamicsError::NonFinite("phase state"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KineticConfig {
    pub mass: f64,
    pub beta3: f64,
}

impl Default for KineticConfig {
    fn default() -> Self {
        Self { mass: 1.0, beta3: 1.0 }
    }
}

impl KineticConfig {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(DynamicsError::InvalidConfig(format!("mass must be positive, got {}", self.mass)));
        }
        if !(self.beta3 >= 0.0 && self.beta3.is_finite()) {
            return Err(DynamicsError::InvalidConfig(format!(
                "beta3 must be nonnegative, got {}",
                self.beta3
            )));
        }
        Ok(())
    }

    /// Effective inertia `m + 3 beta3 |v|^2`.
    fn inertia(&self, v: &[f64]) -> f64 {
        self.mass + 3.0 * self.beta3 * norm_sq(v)
    }
}

/// Time derivative `(dx, dv)` of the state.
pub fn vector_field<G>(s: &PhaseState, k: &KineticConfig, grad_v: G) -> Result<(Vec<f64>, Vec<f64>), DynamicsError>
where
    G: Fn(&[f64]) -> Vec<f64>,
{
    let g = grad_v(&s.x);
    if g.len() != s.x.len() {
        return Err(DynamicsError::LengthMismatch { x: s.x.len(), v: g.len() });
    }
    if !all_finite(&g) {
        return Err(DynamicsError::NonFinite("potential gradient"));
    }
    let inertia = k.inertia(&s.v);
    let dv = g.iter().map(|gi| -gi / inertia).collect();
    Ok((s.v.clone(), dv))
}

/// Conjugate momentum `(m + beta3 |v|^2) v`.
pub fn generalized_momentum(s: &PhaseState, k: &KineticConfig) -> Vec<f64> {
    let c = k.mass + k.beta3 * norm_sq(&s.v);
    s.v.iter().map(|v| c * v).collect()
}

/// Conserved energy `m|v|^2/2 + 3 beta3 |v|^4/4 + V(x)`.
pub fn energy<V>(s: &PhaseState, k: &KineticConfig, potential: V) -> f64
where
    V: Fn(&[f64]) -> f64,
{
    let v2 = norm_sq(&s.v);
    0.5 * k.mass * v2 + 0.75 * k.beta3 * v2 * v2 + potential(&s.x)
}

/// Largest speed reachable with kinetic energy `kinetic`, i.e. the positive
/// root of `m u/2 + 3 beta3 u^2/4 = kinetic` in `u = |v|^2`.
pub fn max_speed(kinetic: f64, k: &KineticConfig) -> f64 {
    if kinetic <= 0.0 {
        return 0.0;
    }
    if k.beta3 == 0.0 {
        return (2.0 * kinetic / k.mass).sqrt();
    }
    let a = 0.75 * k.beta3;
    let b = 0.5 * k.mass;
    // stable form of (-b + sqrt(b^2 + 4 a E)) / (2a)
    let u = 2.0 * kinetic / (b + (b * b + 4.0 * a * kinetic).sqrt());
    u.sqrt()
}

fn offset(s: &PhaseState, dt: f64, d: &(Vec<f64>, Vec<f64>)) -> PhaseState {
    PhaseState {
        x: s.x.iter().zip(&d.0).map(|(x, dx)| x + dt * dx).collect(),
        v: s.v.iter().zip(&d.1).map(|(v, dv)| v + dt * dv).collect(),
    }
}

fn check_dt(dt: f64) -> Result<(), DynamicsError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(DynamicsError::InvalidConfig(format!("dt must be positive, got {dt}")));
    }
    Ok(())
}

/// One classical fourth-order Runge-Kutta step.
pub fn rk4_step<G>(s: &PhaseState, dt: f64, k: &KineticConfig, grad_v: G) -> Result<PhaseState, DynamicsError>
where
    G: Fn(&[f64]) -> Vec<f64>,
{
    check_dt(dt)?;
    s.check()?;
    let k1 = vector_field(s, k, &grad_v)?;
    let k2 = vector_field(&offset(s, dt / 2.0, &k1), k, &grad_v)?;
    let k3 = vector_field(&offset(s, dt / 2.0, &k2), k, &grad_v)?;
    let k4 = vector_field(&offset(s, dt, &k3), k, &grad_v)?;
    let combine = |a: &[f64], i: usize, part: fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>| {
        a[i] + dt / 6.0 * (part(&k1)[i] + 2.0 * part(&k2)[i] + 2.0 * part(&k3)[i] + part(&k4)[i])
    };
    let n = s.x.len();
    let next = PhaseState {
        x: (0..n).map(|i| combine(&s.x, i, |d| &d.0)).collect(),
        v: (0..n).map(|i| combine(&s.v, i, |d| &d.1)).collect(),
    };
    if !all_finite(&next.x) || !all_finite(&next.v) {
        return Err(DynamicsError::NonFinite("integrated state"));
    }
    Ok(next)
}

/// Semi-implicit (symplectic) Euler: velocity first, then position with the
/// new velocity.
pub fn semi_implicit_euler_step<G>(
    s: &PhaseState,
    dt: f64,
    k: &KineticConfig,
    grad_v: G,
) -> Result<PhaseState, DynamicsError>
where
    G: Fn(&[f64]) -> Vec<f64>,
{
    check_dt(dt)?;
    s.check()?;
    let (_, dv) = vector_field(s, k, &grad_v)?;
    let v: Vec<f64> = s.v.iter().zip(&dv).map(|(v, a)| v + dt * a).collect();
    let x = s.x.iter().zip(&v).map(|(x, v)| x + dt * v).collect();
    let next = PhaseState { x, v };
    if !all_finite(&next.x) || !all_finite(&next.v) {
        return Err(DynamicsError::NonFinite("integrated state"));
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    #[default]
    Rk4,
    SemiImplicitEuler,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub state: PhaseState,
    pub energy: f64,
}

/// Integrates `steps` steps and records every state including the start.
pub fn integrate<G, V>(
    start: &PhaseState,
    dt: f64,
    steps: usize,
    k: &KineticConfig,
    integrator: Integrator,
    grad_v: G,
    potential: V,
) -> Result<Vec<TrajectoryPoint>, DynamicsError>
where
    G: Fn(&[f64]) -> Vec<f64>,
    V: Fn(&[f64]) -> f64,
{
    k.validate()?;
    let mut out = Vec::with_capacity(steps + 1);
    let mut s = start.clone();
    out.push(TrajectoryPoint { t: 0.0, energy: energy(&s, k, &potential), state: s.clone() });
    for i in 1..=steps {
        s = match integrator {
            Integrator::Rk4 => rk4_step(&s, dt, k, &grad_v)?,
            Integrator::SemiImplicitEuler => semi_implicit_euler_step(&s, dt, k, &grad_v)?,
        };
        out.push(TrajectoryPoint { t: i as f64 * dt, energy: energy(&s, k, &potential), state: s.clone() });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub x: f64,
    pub v: f64,
    pub dx: f64,
    pub dv: f64,
}

/// Samples the 1-D vector field on a regular `nx x nv` grid spanning the
/// closed ranges. Rows are ordered by `x` first, then `v`.
pub fn phase_portrait<G>(
    x_range: (f64, f64),
    v_range: (f64, f64),
    nx: usize,
    nv: usize,
    k: &KineticConfig,
    grad_v: G,
) -> Result<Vec<FieldSample>, DynamicsError>
where
    G: Fn(&[f64]) -> Vec<f64>,
{
    k.validate()?;
    if nx < 2 || nv < 2 {
        return Err(DynamicsError::InvalidGrid(format!("need at least 2x2 points, got {nx}x{nv}")));
    }
    if !(x_range.0 < x_range.1 && v_range.0 < v_range.1) {
        return Err(DynamicsError::InvalidGrid("ranges must be increasing".into()));
    }
    let probe = grad_v(&[x_range.0]);
    if probe.len() != 1 {
        return Err(DynamicsError::NotOneDimensional(probe.len()));
    }
    let lerp = |(a, b): (f64, f64), i: usize, n: usize| a + (b - a) * i as f64 / (n - 1) as f64;
    let mut out = Vec::with_capacity(nx * nv);
    for i in 0..nx {
        let x = lerp(x_range, i, nx);
        for j in 0..nv {
            let v = lerp(v_range, j, nv);
            let (dx, dv) = vector_field(&PhaseState { x: vec![x], v: vec![v] }, k, &grad_v)?;
            out.push(FieldSample { x, v, dx: dx[0], dv: dv[0] });
        }
    }
    Ok(out)
}

/// Iterates the discrete optimizer `cfg.variant` from `x0` for `steps`
/// steps, returning every iterate including the start.
pub fn discrete_trajectory<G>(
    x0: &[f64],
    cfg: &OptimizerConfig,
    steps: usize,
    grad: G,
) -> Result<Vec<Vec<f64>>, DynamicsError>
where
    G: Fn(&[f64]) -> Vec<f64>,
{
    cfg.validate()?;
    let mut state = OptimizerState::new(x0.len());
    let mut x = x0.to_vec();
    let mut out = vec![x.clone()];
    for _ in 0..steps {
        let g = grad(&x);
        x = step_with(cfg.variant, &x, &g, &mut state, cfg, 1.0)?.new_params;
        out.push(x.clone());
    }
    Ok(out)
}

/// Number of sign flips in a scalar sequence; exact zeros are skipped.
pub fn sign_changes(xs: &[f64]) -> usize {
    let mut prev: Option<bool> = None;
    let mut count = 0;
    for &x in xs {
        if x == 0.0 || x.is_nan() {
            continue;
        }
        let pos = x > 0.0;
        if prev.is_some_and(|p| p != pos) {
            count += 1;
        }
        prev = Some(pos);
    }
    count
}

/// Power `dE/dt` along the flow; zero up to rounding for the exact field.
pub fn energy_rate<G>(s: &PhaseState, k: &KineticConfig, grad_v: G) -> Result<f64, DynamicsError>
where
    G: Fn(&[f64]) -> Vec<f64>,
{
    let (_, dv) = vector_field(s, k, &grad_v)?;
    let g = grad_v(&s.x);
    Ok(k.inertia(&s.v) * dot(&s.v, &dv) + dot(&s.v, &g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizers::Variant;
    use proptest::prelude::*;

    fn harmonic(x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }

    fn harmonic_v(x: &[f64]) -> f64 {
        0.5 * norm_sq(x)
    }

    fn st(x: f64, v: f64) -> PhaseState {
        PhaseState { x: vec![x], v: vec![v] }
    }

    const QUARTIC: KineticConfig = KineticConfig { mass: 1.0, beta3: 1.0 };
    const CLASSIC: KineticConfig = KineticConfig { mass: 1.0, beta3: 0.0 };

    #[test]
    fn field_examples() {
        let (dx, dv) = vector_field(&st(0.7, 0.0), &KineticConfig { mass: 2.0, beta3: 1.0 }, harmonic).unwrap();
        assert_eq!(dx, vec![0.0]);
        assert_eq!(dv, vec![-0.35]);
        let (dx, dv) = vector_field(&st(1.0, 1.0), &QUARTIC, harmonic).unwrap();
        assert_eq!((dx[0], dv[0]), (1.0, -0.25));
        let (dx, dv) = vector_field(&st(0.3, -2.0), &CLASSIC, harmonic).unwrap();
        assert_eq!((dx[0], dv[0]), (-2.0, -0.3));
        assert!(vector_field(&st(1.0, 0.0), &QUARTIC, |_| vec![f64::NAN]).is_err());
    }

    #[test]
    fn momentum_examples() {
        assert_eq!(generalized_momentum(&st(1.0, 0.0), &QUARTIC), vec![0.0]);
        assert_eq!(generalized_momentum(&st(0.0, 1.0), &QUARTIC), vec![2.0]);
        assert_eq!(
            generalized_momentum(&st(0.0, 3.0), &KineticConfig { mass: 2.0, beta3: 0.0 }),
            vec![6.0]
        );
    }

    #[test]
    fn energy_examples() {
        assert_eq!(energy(&st(1.0, 0.0), &QUARTIC, harmonic_v), 0.5);
        assert_eq!(energy(&st(0.0, 1.0), &QUARTIC, harmonic_v), 1.25);
        assert_eq!(energy(&st(2.0, 1.0), &CLASSIC, harmonic_v), 2.5);
    }

    #[test]
    fn free_particle_moves_linearly() {
        let s = PhaseState { x: vec![1.0, -2.0], v: vec![0.5, 0.25] };
        let n = rk4_step(&s, 0.125, &QUARTIC, |x| vec![0.0; x.len()]).unwrap();
        assert_eq!(n.v, s.v);
        for i in 0..2 {
            assert!((n.x[i] - (s.x[i] + 0.125 * s.v[i])).abs() <= 4.0 * f64::EPSILON);
        }
    }

    #[test]
    fn rk4_conserves_energy_and_agrees_with_finer_step() {
        let s0 = st(1.0, 0.0);
        let coarse = integrate(&s0, 1e-3, 10_000, &QUARTIC, Integrator::Rk4, harmonic, harmonic_v).unwrap();
        let e0 = coarse[0].energy;
        let drift = coarse.iter().map(|p| (p.energy - e0).abs() / e0).fold(0.0, f64::max);
        assert!(drift < 1e-8, "drift {drift}");

        let fine = integrate(&s0, 1e-4, 100_000, &QUARTIC, Integrator::Rk4, harmonic, harmonic_v).unwrap();
        let end_c = &coarse.last().unwrap().state;
        let end_f = &fine.last().unwrap().state;
        assert!((end_c.x[0] - end_f.x[0]).abs() < 1e-9);
        assert!((end_c.v[0] - end_f.v[0]).abs() < 1e-9);
    }

    #[test]
    fn harmonic_period_returns_to_start_with_fourth_order_error() {
        let err = |n: usize| {
            let dt = 2.0 * std::f64::consts::PI / n as f64;
            let traj = integrate(&st(1.0, 0.0), dt, n, &CLASSIC, Integrator::Rk4, harmonic, harmonic_v).unwrap();
            let end = &traj.last().unwrap().state;
            ((end.x[0] - 1.0).powi(2) + end.v[0].powi(2)).sqrt()
        };
        let (e1, e2) = (err(200), err(400));
        assert!(e1 < 1e-6);
        let ratio = e1 / e2;
        assert!((12.0..20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn velocity_is_squeezed() {
        // Start at rest at x = 2: energy 2 on the harmonic well.
        let s0 = st(2.0, 0.0);
        let peak = |k: KineticConfig| {
            integrate(&s0, 1e-3, 8000, &k, Integrator::Rk4, harmonic, harmonic_v)
                .unwrap()
                .iter()
                .map(|p| p.state.v[0].abs())
                .fold(0.0, f64::max)
        };
        let (vq, vc) = (peak(QUARTIC), peak(CLASSIC));
        assert!(vq < vc);
        assert!((vq - max_speed(2.0, &QUARTIC)).abs() < 1e-5);
        assert!((vc - max_speed(2.0, &CLASSIC)).abs() < 1e-5);
        assert!((max_speed(2.0, &CLASSIC) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn small_beta3_approaches_classical_flow() {
        let run = |b3: f64| {
            let k = KineticConfig { mass: 1.0, beta3: b3 };
            integrate(&st(1.0, 0.5), 1e-2, 1000, &k, Integrator::Rk4, harmonic, harmonic_v).unwrap()
        };
        let (a, b) = (run(1e-8), run(0.0));
        let sup = a
            .iter()
            .zip(&b)
            .map(|(p, q)| (p.state.x[0] - q.state.x[0]).abs().max((p.state.v[0] - q.state.v[0]).abs()))
            .fold(0.0, f64::max);
        assert!(sup < 1e-6, "sup {sup}");
    }

    #[test]
    fn semi_implicit_euler_drift_is_first_order() {
        let worst = |dt: f64| {
            let steps = (50.0 / dt) as usize;
            let traj =
                integrate(&st(1.0, 0.0), dt, steps, &QUARTIC, Integrator::SemiImplicitEuler, harmonic, harmonic_v)
                    .unwrap();
            let e0 = traj[0].energy;
            traj.iter().map(|p| (p.energy - e0).abs() / e0).fold(0.0, f64::max)
        };
        let (a, b) = (worst(1e-2), worst(5e-3));
        assert!(a < 0.2, "drift {a}");
        assert!((1.5..2.5).contains(&(a / b)), "ratio {}", a / b);
    }

    #[test]
    fn portrait_grid() {
        let grid = phase_portrait((-1.0, 1.0), (-1.0, 1.0), 3, 3, &QUARTIC, harmonic).unwrap();
        assert_eq!(grid.len(), 9);
        let origin = grid.iter().find(|s| s.x == 0.0 && s.v == 0.0).unwrap();
        assert_eq!((origin.dx, origin.dv), (0.0, 0.0));
        let corner = grid.iter().find(|s| s.x == 1.0 && s.v == 1.0).unwrap();
        assert_eq!((corner.dx, corner.dv), (1.0, -0.25));
        assert!(matches!(
            phase_portrait((-1.0, 1.0), (-1.0, 1.0), 3, 3, &QUARTIC, |_| vec![0.0, 0.0]),
            Err(DynamicsError::NotOneDimensional(2))
        ));
        assert!(phase_portrait((-1.0, 1.0), (-1.0, 1.0), 1, 3, &QUARTIC, harmonic).is_err());
    }

    #[test]
    fn sign_change_counting() {
        assert_eq!(sign_changes(&[1.0, -1.0, 0.0, -2.0, 3.0]), 2);
        assert_eq!(sign_changes(&[]), 0);
    }

    #[test]
    fn vrmomentum_oscillates_no_more_than_momentum() {
        let mut cfg = OptimizerConfig::new(Variant::Momentum, 1.0);
        cfg.beta1 = 0.5;
        cfg.beta3 = 2.0;
        let plain = discrete_trajectory(&[1.0], &cfg, 200, harmonic).unwrap();
        cfg.variant = Variant::VRMomentum;
        let vr = discrete_trajectory(&[1.0], &cfg, 200, harmonic).unwrap();
        let xs = |t: &[Vec<f64>]| t.iter().map(|x| x[0]).collect::<Vec<_>>();
        assert!(sign_changes(&xs(&vr)) <= sign_changes(&xs(&plain)));
        assert!((vr[1][0] - vr[0][0]).abs() < (plain[1][0] - plain[0][0]).abs());
    }

    proptest! {
        #[test]
        fn field_is_odd_for_even_potentials(x in -5.0f64..5.0, v in -5.0f64..5.0, b3 in 0.0f64..3.0) {
            let k = KineticConfig { mass: 1.0, beta3: b3 };
            let quartic_well = |x: &[f64]| vec![x[0].powi(3) + 0.5 * x[0]];
            let (dx, dv) = vector_field(&st(x, v), &k, quartic_well).unwrap();
            let (mx, mv) = vector_field(&st(-x, -v), &k, quartic_well).unwrap();
            prop_assert_eq!(dx[0], -mx[0]);
            prop_assert_eq!(dv[0], -mv[0]);
        }

        #[test]
        fn energy_rate_vanishes(x in proptest::collection::vec(-3.0f64..3.0, 3), v in proptest::collection::vec(-3.0f64..3.0, 3)) {
            let s = PhaseState { x, v };
            let r = energy_rate(&s, &QUARTIC, harmonic).unwrap();
            prop_assert!(r.abs() < 1e-10);
        }
    }
}
