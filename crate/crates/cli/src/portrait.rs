//! Phase portrait of the quartic-kinetic flow for `V = k x^2 / 2`, plus
//! the matching discrete VRMomentum and Momentum trajectories.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use vrlab_core::dynamics::{
    discrete_trajectory, integrate, phase_portrait, sign_changes, DynamicsError, FieldSample, Integrator,
    TrajectoryPoint,
};
use vrlab_core::{KineticConfig, OptimizerConfig, PhaseState, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PortraitConfig {
    pub mass: f64,
    pub beta3: f64,
    pub stiffness: f64,
    pub x_range: [f64; 2],
    pub v_range: [f64; 2],
    pub nx: usize,
    pub nv: usize,
    pub trajectory: TrajectorySpec,
    pub discrete: DiscreteSpec,
}

impl Default for PortraitConfig {
    fn default() -> Self {
        Self {
            mass: 1.0,
            beta3: 1.0,
            stiffness: 1.0,
            x_range: [-2.0, 2.0],
            v_range: [-2.0, 2.0],
            nx: 17,
            nv: 17,
            trajectory: TrajectorySpec::default(),
            discrete: DiscreteSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectorySpec {
    pub start: [f64; 2],
    pub dt: f64,
    pub steps: usize,
    pub integrator: Integrator,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self { start: [1.0, 0.0], dt: 1e-2, steps: 1000, integrator: Integrator::Rk4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscreteSpec {
    pub x0: f64,
    pub alpha0: f64,
    pub beta1: f64,
    pub beta3: f64,
    pub lr_cutoff: f64,
    pub steps: usize,
}

impl Default for DiscreteSpec {
    fn default() -> Self {
        Self { x0: 1.0, alpha0: 0.1, beta1: 0.9, beta3: 1.0, lr_cutoff: 19.0, steps: 200 }
    }
}

pub struct Portrait {
    pub field: Vec<FieldSample>,
    pub trajectory: Vec<TrajectoryPoint>,
    pub vrmomentum: Vec<f64>,
    pub momentum: Vec<f64>,
}

impl Portrait {
    pub fn compute(cfg: &PortraitConfig) -> Result<Self, DynamicsError> {
        let k = KineticConfig { mass: cfg.mass, beta3: cfg.beta3 };
        let stiff = cfg.stiffness;
        let grad = move |x: &[f64]| x.iter().map(|x| stiff * x).collect::<Vec<_>>();
        let pot = move |x: &[f64]| 0.5 * stiff * x.iter().map(|x| x * x).sum::<f64>();
        let field = phase_portrait(
            (cfg.x_range[0], cfg.x_range[1]),
            (cfg.v_range[0], cfg.v_range[1]),
            cfg.nx,
            cfg.nv,
            &k,
            grad,
        )?;
        let t = &cfg.trajectory;
        let start = PhaseState::new(vec![t.start[0]], vec![t.start[1]])?;
        let trajectory = integrate(&start, t.dt, t.steps, &k, t.integrator, grad, pot)?;
        let d = &cfg.discrete;
        let opt = |variant: Variant, beta3: f64| {
            let mut o = OptimizerConfig::new(variant, d.alpha0);
            o.beta1 = d.beta1;
            o.beta3 = beta3;
            o.alpha1 = d.lr_cutoff;
            o
        };
        let first = |xs: Vec<Vec<f64>>| xs.into_iter().map(|x| x[0]).collect::<Vec<_>>();
        let vrmomentum = first(discrete_trajectory(&[d.x0], &opt(Variant::VRMomentum, d.beta3), d.steps, grad)?);
        let momentum = first(discrete_trajectory(&[d.x0], &opt(Variant::Momentum, 0.0), d.steps, grad)?);
        Ok(Self { field, trajectory, vrmomentum, momentum })
    }

    pub fn field_csv(&self) -> String {
        let mut s = String::from("x,v,dx,dv\n");
        for f in &self.field {
            let _ = writeln!(s, "{},{},{},{}", f.x, f.v, f.dx, f.dv);
        }
        s
    }

    pub fn trajectory_csv(&self) -> String {
        let mut s = String::from("t,x,v,energy\n");
        for p in &self.trajectory {
            let _ = writeln!(s, "{},{},{},{}", p.t, p.state.x[0], p.state.v[0], p.energy);
        }
        s
    }

    pub fn discrete_csv(&self) -> String {
        let mut s = String::from("step,vrmomentum,momentum\n");
        for (i, (a, b)) in self.vrmomentum.iter().zip(&self.momentum).enumerate() {
            let _ = writeln!(s, "{i},{a},{b}");
        }
        s
    }

    pub fn sign_changes(&self) -> (usize, usize) {
        (sign_changes(&self.vrmomentum), sign_changes(&self.momentum))
    }
}
