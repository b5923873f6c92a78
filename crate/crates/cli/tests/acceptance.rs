//! Acceptance gate: one PASS/FAIL line per criterion. Exits non-zero when
//! any criterion fails.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use vrlab_core::dynamics::{discrete_trajectory, integrate, sign_changes, Integrator};
use vrlab_core::harness::{run_experiment, ExperimentConfig, RunOutput};
use vrlab_core::models::{make_blobs, make_two_moons, Activation, Loss, Mlp, MlpObjective, MlpSpec};
use vrlab_core::optimizers::{adamw_step, vradam_step};
use vrlab_core::probes::{aeos_threshold, preconditioned_power_iteration, PowerIterConfig, ProbeError};
use vrlab_core::vecops::mat_vec;
use vrlab_core::{KineticConfig, Objective, OptimizerConfig, OptimizerState, PhaseState, Variant};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn ulp(x: f64) -> f64 {
    x.next_up() - x
}

fn within(elapsed: Duration, limit: Duration) -> (bool, String) {
    (elapsed < limit, format!("{:.3}s (limit {:.0}s)", elapsed.as_secs_f64(), limit.as_secs_f64()))
}

fn adamw_equivalence() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dim = 17;
    let mut cfg = OptimizerConfig::new(Variant::VRAdam, 3e-3);
    cfg.beta3 = 0.0;
    cfg.weight_decay = 1e-2;
    let mut acfg = cfg.clone();
    acfg.variant = Variant::AdamW;
    let mut pv: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut pa = pv.clone();
    let (mut sv, mut sa) = (OptimizerState::new(dim), OptimizerState::new(dim));
    let mut mismatches = 0;
    for _ in 0..1000 {
        let g: Vec<f64> = (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect();
        let scale = rng.random_range(0.1..1.0);
        let ov = vradam_step(&pv, &g, &mut sv, &cfg, scale).unwrap();
        let oa = adamw_step(&pa, &g, &mut sa, &acfg, scale).unwrap();
        pv = ov.new_params;
        pa = oa.new_params;
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        if bits(&pv) != bits(&pa) || bits(&sv.v) != bits(&sa.v) || bits(&sv.m) != bits(&sa.m) {
            mismatches += 1;
        }
    }
    let (fast, t) = within(t0.elapsed(), Duration::from_secs(1));
    outcome(mismatches == 0 && fast, format!("{mismatches} mismatching steps of 1000, {t}"))
}

fn lr_bounds_on_rosenbrock() -> Outcome {
    let t0 = Instant::now();
    let text = "steps = 5000\n[objective]\nkind = \"rosenbrock\"\n[optimizer]\nvariant = \"vradam\"\nalpha0 = 1e-3\n";
    let cfg = ExperimentConfig::from_toml_str(text, Path::new("rosenbrock.toml")).unwrap();
    let out = run_experiment(&cfg).unwrap();
    let (lo, hi) = (cfg.optimizer.alpha0 / (1.0 + cfg.optimizer.alpha1), cfg.optimizer.alpha0);
    let lrs: Vec<f64> = out.trace.iter().filter_map(|r| r.effective_lr).collect();
    let outside = lrs.iter().filter(|&&lr| !(lo <= lr && lr <= hi)).count();
    let clipped = lrs.iter().filter(|&&lr| lr == lo).count();
    let (fast, t) = within(t0.elapsed(), Duration::from_secs(1));
    outcome(
        lrs.len() == 5000 && outside == 0 && fast,
        format!("{} steps, {outside} outside [{lo:e}, {hi:e}], {clipped} at the floor, {t}", lrs.len()),
    )
}

fn threshold_formula() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let c = (2.0 + 2.0 * 0.9) / (1.0 - 0.9);
    let mut worst_ulps: f64 = 0.0;
    let mut gd_exact = true;
    for _ in 0..1_000_000 {
        let eta = 10f64.powf(rng.random_range(-6.0..2.0));
        let t = aeos_threshold(0.9, eta).unwrap();
        worst_ulps = worst_ulps.max((t * eta - c).abs() / ulp(c));
        gd_exact &= aeos_threshold(0.0, eta).unwrap() == 2.0 / eta;
    }
    let c_off = (c - 38.0).abs() / ulp(38.0);
    outcome(
        worst_ulps <= 1.0 && c_off <= 1.0 && gd_exact,
        format!("max |t*eta - c| = {worst_ulps} ulp, c = {c} is {c_off} ulp from 38, beta1=0 gives 2/eta: {gd_exact}"),
    )
}

fn energy_conservation() -> Outcome {
    let t0 = Instant::now();
    let k = KineticConfig { mass: 1.0, beta3: 1.0 };
    let start = PhaseState::new(vec![1.0], vec![0.5]).unwrap();
    let traj = integrate(
        &start,
        1e-3,
        10_000,
        &k,
        Integrator::Rk4,
        |x: &[f64]| x.to_vec(),
        |x: &[f64]| 0.5 * x[0] * x[0],
    )
    .unwrap();
    let e0 = traj[0].energy;
    let drift = traj.iter().map(|p| (p.energy - e0).abs() / e0).fold(0.0, f64::max);
    let (fast, t) = within(t0.elapsed(), Duration::from_secs(1));
    outcome(drift < 1e-6 && fast, format!("max relative drift {drift:.3e} (limit 1e-6), {t}"))
}

fn momentum_portrait() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut failures = Vec::new();
    for draw in 0..50 {
        let alpha0 = rng.random_range(0.05..1.5);
        let beta1 = rng.random_range(0.0..0.95);
        let beta3 = rng.random_range(0.1..5.0);
        let cfg = |variant, b3| {
            let mut c = OptimizerConfig::new(variant, alpha0);
            c.beta1 = beta1;
            c.beta3 = b3;
            c.alpha1 = 19.0;
            c
        };
        let grad = |x: &[f64]| x.to_vec();
        let xs = |c: &OptimizerConfig| {
            discrete_trajectory(&[1.0], c, 200, grad).unwrap().into_iter().map(|x| x[0]).collect::<Vec<_>>()
        };
        let vr = xs(&cfg(Variant::VRMomentum, beta3));
        let plain = xs(&cfg(Variant::Momentum, 0.0));
        let first_ok = (vr[1] - vr[0]).abs() <= (plain[1] - plain[0]).abs();
        let (a, b) = (sign_changes(&vr), sign_changes(&plain));
        if a > b || !first_ok {
            failures.push(format!("draw {draw}: {a} vs {b} sign changes, first step ok {first_ok}"));
        }
    }
    outcome(failures.is_empty(), format!("{} of 50 draws violate: {failures:?}", failures.len()))
}

fn sharpness_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = PowerIterConfig { max_iters: 20_000, tol: 1e-13, seed: 9 };
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < 500 {
        let b = DMatrix::<f64>::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
        let a = &b * b.transpose() + DMatrix::identity(5, 5) * 0.1;
        let m: Vec<f64> = if done % 2 == 0 {
            vec![0.0; 5]
        } else {
            (0..5).map(|_| rng.random_range(0.01..4.0)).collect()
        };
        let eps = if done % 2 == 0 { 1.0 } else { 1e-8 };
        let p: Vec<f64> = m.iter().map(|m| m.sqrt() + eps).collect();
        // P^-1 A is similar to the symmetric P^-1/2 A P^-1/2
        let s = DMatrix::from_fn(5, 5, |i, j| a[(i, j)] / (p[i] * p[j]).sqrt());
        let mut eig = SymmetricEigen::new(s).eigenvalues.as_slice().to_vec();
        eig.sort_by(|x, y| y.total_cmp(x));
        if (eig[0] - eig[1]) / eig[0] < 0.1 {
            continue;
        }
        let rows: Vec<Vec<f64>> = (0..5).map(|i| (0..5).map(|j| a[(i, j)]).collect()).collect();
        let est = preconditioned_power_iteration(|u| Ok::<_, ProbeError>(mat_vec(&rows, u)), &m, eps, &cfg, None)
            .unwrap();
        worst = worst.max((est.lambda_max - eig[0]).abs());
        done += 1;
    }
    let exact = |rows: Vec<Vec<f64>>| move |u: &[f64]| Ok::<_, ProbeError>(mat_vec(&rows, u));
    let default = PowerIterConfig::default();
    let diag = vec![vec![1.0, 0.0], vec![0.0, 10.0]];
    let a = preconditioned_power_iteration(exact(diag.clone()), &[0.0, 0.0], 1.0, &default, None).unwrap();
    // sqrt(m) + eps = 2 exactly
    let b = preconditioned_power_iteration(exact(diag), &[4.0, 4.0], 1e-300, &default, None).unwrap();
    let ok_a = (a.lambda_max - 10.0).abs() <= default.tol * 10.0;
    let ok_b = (b.lambda_max - 5.0).abs() <= default.tol * 5.0;
    outcome(
        worst < 1e-6 && ok_a && ok_b,
        format!(
            "500 SPD instances, max abs error {worst:.2e} (limit 1e-6); diag(1,10) -> {}, P=diag(2,2) -> {}",
            a.lambda_max, b.lambda_max
        ),
    )
}

fn gradient_exactness() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for spec_i in 0..10 {
        let input = rng.random_range(1..5);
        let classes = rng.random_range(2..5);
        let depth = rng.random_range(1..4);
        let mut layers = vec![input];
        layers.extend((0..depth).map(|_| rng.random_range(1..8)));
        layers.push(classes);
        let activation = if rng.random_bool(0.5) { Activation::Tanh } else { Activation::Relu };
        let loss = if rng.random_bool(0.5) { Loss::CrossEntropy } else { Loss::Mse };
        let mlp = Mlp::new(MlpSpec { layer_sizes: layers, activation, loss, init_seed: spec_i }).unwrap();
        let data = make_blobs(12, classes, input, spec_i + 100).unwrap();
        let obj = MlpObjective::new(mlp, Arc::new(data)).unwrap();
        let theta: Vec<f64> = (0..obj.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = obj.grad(&theta, None).unwrap();
        for _ in 0..10 {
            let i = rng.random_range(0..obj.dim());
            let h = 1e-6 * (1.0 + theta[i].abs());
            let (mut tp, mut tm) = (theta.clone(), theta.clone());
            tp[i] += h;
            tm[i] -= h;
            let fd = (obj.value(&tp, None).unwrap() - obj.value(&tm, None).unwrap()) / (2.0 * h);
            let rel = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-3);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    let (fast, t) = within(t0.elapsed(), Duration::from_secs(10));
    outcome(worst < 1e-5 && fast, format!("{checked} coordinates, max relative error {worst:.2e} (limit 1e-5), {t}"))
}

fn moons_config(variant: &str, out: &Path) -> ExperimentConfig {
    let text = format!(
        r#"seed = 0
steps = 5000
output = "{}"

[objective]
kind = "mlp"
hidden = [16, 16]
activation = "tanh"
loss = "cross-entropy"
dataset = {{ kind = "two-moons", n = 200, noise = 0.1 }}
val_fraction = 0.0

[optimizer]
variant = "{variant}"
alpha0 = 0.01
beta3 = 1.0
lr_cutoff = 19

[stop]
loss_below = 0.1

[probe]
enabled = true
every = 1
"#,
        out.display()
    );
    ExperimentConfig::from_toml_str(&text, Path::new("moons.toml")).unwrap()
}

struct EosRuns {
    adam: RunOutput,
    vradam: RunOutput,
    elapsed: Duration,
}

fn eos_runs(dir: &Path, tag: &str) -> EosRuns {
    let t0 = Instant::now();
    let adam = run_experiment(&moons_config("adam", &dir.join(format!("adam-{tag}.csv")))).unwrap();
    let vradam = run_experiment(&moons_config("vradam", &dir.join(format!("vradam-{tag}.csv")))).unwrap();
    EosRuns { adam, vradam, elapsed: t0.elapsed() }
}

fn edge_of_stability(runs: &EosRuns) -> (Outcome, Outcome) {
    let lambdas = |o: &RunOutput| o.trace.iter().filter_map(|r| r.lambda_max).collect::<Vec<_>>();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let ratio = runs
        .adam
        .trace
        .iter()
        .filter_map(|r| Some(r.lambda_max? / r.aeos_threshold?))
        .fold(0.0, f64::max);
    let reached = |o: &RunOutput| o.summary.final_train_loss.is_some_and(|l| l < 0.1);
    let (la, lv) = (lambdas(&runs.adam), lambdas(&runs.vradam));
    let (fast, t) = within(runs.elapsed, Duration::from_secs(120));
    let bound = outcome(
        reached(&runs.adam) && !la.is_empty() && ratio <= 1.05 && fast,
        format!(
            "Adam reached loss < 0.1 in {} steps; max lambda_max / threshold = {ratio:.3} (limit 1.05); {t}",
            runs.adam.summary.steps_executed
        ),
    );
    let (ma, mv) = (mean(&la), mean(&lv));
    let order = outcome(
        reached(&runs.vradam) && !lv.is_empty() && mv <= ma,
        format!(
            "mean lambda_max VRAdam {mv:.4} vs Adam {ma:.4} over {} / {} probes",
            lv.len(),
            la.len()
        ),
    );
    (bound, order)
}

fn determinism(dir: &Path) -> Outcome {
    let read = |name: &str| std::fs::read(dir.join(name)).unwrap();
    let _ = eos_runs(dir, "repeat");
    let same_adam = read("adam-first.csv") == read("adam-repeat.csv");
    let same_vr = read("vradam-first.csv") == read("vradam-repeat.csv");
    outcome(
        same_adam && same_vr,
        format!("Adam traces identical: {same_adam}, VRAdam traces identical: {same_vr}"),
    )
}

fn divergence_exit_code(dir: &Path) -> Outcome {
    let cfg = dir.join("sgd.toml");
    std::fs::write(
        &cfg,
        "steps = 1000\n[objective]\nkind = \"rosenbrock\"\n[optimizer]\nvariant = \"sgd-nesterov\"\nalpha0 = 1e3\n",
    )
    .unwrap();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = vrlab_cli::run_with(["vrlab", "run", cfg.to_str().unwrap()], &mut out, &mut err);
    let summary: serde_json::Value = serde_json::from_slice(&out).unwrap_or_default();
    let flagged = summary["diverged"] == serde_json::Value::Bool(true);
    outcome(
        code == 2 && flagged && err.is_empty(),
        format!("exit code {code}, diverged flag {flagged}, reason {}", summary["divergence"]),
    )
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let first = eos_runs(dir.path(), "first");
    let (eos_bound, eos_order) = edge_of_stability(&first);
    let results = [
        ("1 AdamW equivalence at beta3 = 0", adamw_equivalence()),
        ("2 dynamic LR bounds on Rosenbrock", lr_bounds_on_rosenbrock()),
        ("3 AEoS threshold formula", threshold_formula()),
        ("4 RK4 energy conservation", energy_conservation()),
        ("5 VRMomentum vs Momentum portrait", momentum_portrait()),
        ("6 preconditioned sharpness oracle", sharpness_oracle()),
        ("7 MLP gradient exactness", gradient_exactness()),
        ("8a Adam sharpness under 1.05 x AEoS threshold", eos_bound),
        ("8b VRAdam mean sharpness <= Adam", eos_order),
        ("9 deterministic traces", determinism(dir.path())),
        ("10 divergence exit code", divergence_exit_code(dir.path())),
    ];
    let _ = make_two_moons;
    let mut failed = 0;
    for (name, r) in &results {
        println!("{} criterion {name}: {}", if r.pass { "PASS" } else { "FAIL" }, r.detail);
        failed += usize::from(!r.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
