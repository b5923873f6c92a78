use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use super::config::{DatasetSpec, ExperimentConfig, ObjectiveSpec};
use super::trace::{TraceRecord, TraceWriter};
use super::HarnessError;
use crate::models::{
    load_idx, make_blobs, make_two_moons, minibatches, Dataset, Labels, Loss, Mlp, MlpObjective, MlpSpec,
    Objective, QuadraticObjective, Rosenbrock, Split,
};
use crate::optimizers::{lr_scale, OptimError, Optimizer, OptimizerConfig, OptimizerState, ScheduleKind};
use crate::probes::{ProbeError, ProbeReading, SharpnessProbe};
use crate::vecops::all_finite;

/// Evaluation cadence for objectives without a dataset.
pub const ANALYTIC_EPOCH_STEPS: u64 = 100;

pub struct Objectives {
    pub train: Arc<dyn Objective>,
    pub val: Option<Arc<dyn Objective>>,
    pub test: Option<Arc<dyn Objective>>,
    pub init: Vec<f64>,
    /// Training-set size for dataset objectives.
    pub train_samples: Option<usize>,
}

fn dataset_of(spec: &DatasetSpec, seed: u64) -> Result<Dataset, HarnessError> {
    Ok(match spec {
        DatasetSpec::TwoMoons { n, noise } => make_two_moons(*n, *noise, seed)?,
        DatasetSpec::Blobs { n, classes, dim } => make_blobs(*n, *classes, *dim, seed)?,
        DatasetSpec::Idx { images, labels, limit } => {
            let ds = load_idx(images, labels)?;
            match limit {
                Some(k) if *k < ds.len() => {
                    let idx: Vec<usize> = (0..*k).collect();
                    let b = ds.gather(&idx)?;
                    Dataset::new(b.inputs, b.dim, b.labels, Split::Train)?
                }
                _ => ds,
            }
        }
    })
}

/// Builds the training objective, optional evaluation objectives and the
/// initial parameters described by `cfg`.
pub fn build_objectives(cfg: &ExperimentConfig) -> Result<Objectives, HarnessError> {
    cfg.check_paths()?;
    match &cfg.objective {
        ObjectiveSpec::Quadratic { diag, matrix, init } => {
            let q = match (diag, matrix) {
                (Some(d), _) => QuadraticObjective::diagonal(d)?,
                (None, Some(m)) => QuadraticObjective::new(m.clone())?,
                (None, None) => return Err(HarnessError::Config("quadratic needs diag or matrix".into())),
            };
            let q: Arc<dyn Objective> = Arc::new(q);
            Ok(Objectives { train: q.clone(), val: Some(q), test: None, init: init.clone(), train_samples: None })
        }
        ObjectiveSpec::Rosenbrock { init } => {
            let r: Arc<dyn Objective> = Arc::new(Rosenbrock);
            Ok(Objectives { train: r.clone(), val: Some(r), test: None, init: init.to_vec(), train_samples: None })
        }
        ObjectiveSpec::Mlp { hidden, activation, loss, init_seed, dataset, val_fraction, test_fraction } => {
            let mut full = dataset_of(dataset, cfg.seed)?;
            let outputs = match (&full.labels, loss) {
                (Labels::Values { width, .. }, Loss::Mse) => *width,
                (Labels::Values { .. }, Loss::CrossEntropy) => {
                    return Err(HarnessError::Config("cross-entropy needs a classification dataset".into()))
                }
                _ => full.num_classes().unwrap_or(1),
            };
            full.split = Split::Test;
            let (test, rest) = full.split_off(*test_fraction, cfg.seed, Split::Val);
            let val_share = if *test_fraction < 1.0 { val_fraction / (1.0 - test_fraction) } else { 0.0 };
            let (val, train) = rest.split_off(val_share, cfg.seed.wrapping_add(1), Split::Train);
            if train.is_empty() {
                return Err(HarnessError::Config("training split is empty".into()));
            }
            let mut layers = vec![full.dim];
            layers.extend(hidden);
            layers.push(outputs);
            let mlp = Mlp::new(MlpSpec {
                layer_sizes: layers,
                activation: *activation,
                loss: *loss,
                init_seed: init_seed.unwrap_or(cfg.seed),
            })?;
            let init = mlp.init_params();
            let wrap = |d: Dataset| -> Result<Option<Arc<dyn Objective>>, HarnessError> {
                if d.is_empty() {
                    return Ok(None);
                }
                Ok(Some(Arc::new(MlpObjective::new(mlp.clone(), Arc::new(d))?)))
            };
            let train_samples = Some(train.len());
            Ok(Objectives {
                train: wrap(train)?.expect("nonempty"),
                val: wrap(val)?,
                test: wrap(test)?,
                init,
                train_samples,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Budget,
    LossThreshold,
    AccuracyThreshold,
    Diverged,
}

/// Serializes non-finite numbers as strings so they stay visible.
mod lossy {
    use super::*;

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Num {
        Finite(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            None => s.serialize_none(),
            Some(x) if x.is_finite() => s.serialize_some(x),
            Some(x) => s.serialize_some(&x.to_string()),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(match Option::<Num>::deserialize(d)? {
            None => None,
            Some(Num::Finite(x)) => Some(x),
            Some(Num::Text(t)) => Some(t.parse().map_err(serde::de::Error::custom)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: Option<String>,
    pub optimizer: String,
    pub config_hash: String,
    pub steps_executed: u64,
    #[serde(with = "lossy", default)]
    pub final_train_loss: Option<f64>,
    #[serde(with = "lossy", default)]
    pub best_train_loss: Option<f64>,
    #[serde(with = "lossy", default)]
    pub final_val_loss: Option<f64>,
    #[serde(with = "lossy", default)]
    pub best_val_loss: Option<f64>,
    #[serde(with = "lossy", default)]
    pub final_test_loss: Option<f64>,
    #[serde(with = "lossy", default)]
    pub best_test_loss: Option<f64>,
    #[serde(with = "lossy", default)]
    pub final_train_accuracy: Option<f64>,
    #[serde(with = "lossy", default)]
    pub final_val_accuracy: Option<f64>,
    #[serde(with = "lossy", default)]
    pub max_lambda: Option<f64>,
    pub diverged: bool,
    /// Where the first non-finite value showed up.
    pub divergence: Option<String>,
    pub stop_reason: StopReason,
    pub wall_clock_seconds: f64,
    pub trace_path: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub trace: Vec<TraceRecord>,
    pub params: Vec<f64>,
    pub checkpoint: Option<Checkpoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: u64,
    pub effective_lr: f64,
    pub params: Vec<f64>,
    pub optimizer: OptimizerConfig,
    pub state: OptimizerState,
    pub config_hash: String,
}

/// SHA-256 over the fields that determine a run's numbers; the output
/// location and trace format are excluded.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.output = None;
    c.format = Default::default();
    c.name = None;
    let canon = serde_json::to_string(&c).expect("config always serializes");
    Sha256::digest(canon.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn summary_path(trace: &Path) -> PathBuf {
    trace.with_extension("summary.json")
}

pub fn checkpoint_path(trace: &Path) -> PathBuf {
    trace.with_extension("ckpt.json")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text + "\n").map_err(|e| HarnessError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("bad checkpoint {}: {e}", path.display())))
}

#[derive(Default)]
struct Tracker {
    last: Option<f64>,
    best: Option<f64>,
    last_acc: Option<f64>,
}

impl Tracker {
    fn push(&mut self, loss: f64, acc: Option<f64>) {
        self.last = Some(loss);
        if loss.is_finite() && self.best.is_none_or(|b| loss < b) {
            self.best = Some(loss);
        }
        self.last_acc = acc;
    }
}

struct Loop<'a> {
    objs: &'a Objectives,
    writer: Option<TraceWriter>,
    rows: Vec<TraceRecord>,
    train: Tracker,
    val: Tracker,
    test: Tracker,
    divergence: Option<String>,
}

impl Loop<'_> {
    fn record(&mut self, r: TraceRecord) -> Result<(), HarnessError> {
        if let Some(w) = &mut self.writer {
            w.write(&r)?;
        }
        self.rows.push(r);
        Ok(())
    }

    fn diverge(&mut self, what: String) {
        if self.divergence.is_none() {
            self.divergence = Some(what);
        }
    }

    fn evaluate(&mut self, step: u64, epoch: u64, theta: &[f64]) -> Result<(), HarnessError> {
        for (split, obj) in [(Split::Val, self.objs.val.clone()), (Split::Test, self.objs.test.clone())] {
            let Some(obj) = obj else { continue };
            let loss = obj.value(theta, None)?;
            let acc = obj.accuracy(theta, None);
            if !loss.is_finite() {
                self.diverge(format!("non-finite {} loss at step {step}", split.as_str()));
            }
            match split {
                Split::Val => self.val.push(loss, acc),
                _ => self.test.push(loss, acc),
            }
            self.record(TraceRecord::eval(step, epoch, split, loss, acc))?;
        }
        Ok(())
    }
}

fn is_non_finite(e: &OptimError) -> bool {
    matches!(e, OptimError::NonFiniteGradient { .. } | OptimError::NonFiniteNorm(_))
}

/// Runs one seeded experiment. A non-finite value ends the run with
/// `diverged = true` instead of an error. When `cfg.output` is set the
/// trace is streamed there, with summary and checkpoint files beside it.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    cfg.validate()?;
    let started = Instant::now();
    let objs = build_objectives(cfg)?;
    let obj = objs.train.clone();
    let mut theta = objs.init.clone();
    let dim = theta.len();
    let mut opt = Optimizer::new(cfg.optimizer.clone(), dim)?;
    let mut probe = SharpnessProbe::new(cfg.probe.clone())?;

    let (epoch_steps, full_batch) = match objs.train_samples {
        None => (ANALYTIC_EPOCH_STEPS, true),
        Some(n) => match cfg.batch_size {
            Some(bs) if bs < n => (n.div_ceil(bs) as u64, false),
            _ => (1, true),
        },
    };
    let total_steps = cfg.steps.unwrap_or_else(|| cfg.epochs.unwrap_or(1) * epoch_steps);
    let mut sched = cfg.scheduler.clone();
    if sched.kind == ScheduleKind::WarmupCosineAnnealing && sched.total_epochs == 0 {
        sched.total_epochs = total_steps.div_ceil(epoch_steps).min(u32::MAX as u64) as u32;
    }
    sched.validate(cfg.optimizer.alpha0)?;

    let writer = match &cfg.output {
        Some(p) => Some(TraceWriter::create(p, cfg.format)?),
        None => None,
    };
    let mut lp = Loop {
        objs: &objs,
        writer,
        rows: Vec::new(),
        train: Tracker::default(),
        val: Tracker::default(),
        test: Tracker::default(),
        divergence: None,
    };

    let mut stop = StopReason::Budget;
    let mut batches: Vec<Vec<usize>> = Vec::new();
    let mut steps_done = 0;
    let mut last_eval = 0;
    let mut last_lr = cfg.optimizer.alpha0;
    let mut max_lambda: Option<f64> = None;

    for step in 1..=total_steps {
        let epoch = (step - 1) / epoch_steps;
        let pos = ((step - 1) % epoch_steps) as usize;
        let batch: Option<&[usize]> = if full_batch {
            None
        } else {
            if pos == 0 {
                batches = minibatches(objs.train_samples.unwrap_or(0), cfg.batch_size.unwrap_or(1), cfg.seed, epoch)?
                    .collect();
            }
            Some(&batches[pos])
        };
        steps_done = step;
        let scale = lr_scale(epoch.min(u32::MAX as u64) as u32, cfg.optimizer.alpha0, &sched)?;
        let (loss, grad) = obj.value_and_grad(&theta, batch)?;
        let acc = obj.accuracy(&theta, batch);
        let mut row = TraceRecord::eval(step, epoch, Split::Train, loss, acc);
        row.grad_norm = Some(crate::vecops::norm(&grad));
        if !loss.is_finite() || !all_finite(&grad) {
            lp.diverge(format!("non-finite training loss or gradient at step {step}"));
        } else {
            let before = theta.clone();
            match opt.step(&mut theta, &grad, scale) {
                Ok(o) => {
                    last_lr = o.effective_lr;
                    row.effective_lr = Some(o.effective_lr);
                    row.velocity_norm = Some(o.velocity_sq_norm.sqrt());
                    if !all_finite(&theta) {
                        lp.diverge(format!("non-finite parameters after step {step}"));
                    } else if probe.due(step) {
                        match probe.measure(obj.as_ref(), &before, batch, &opt, o.effective_lr) {
                            Ok(ProbeReading { lambda_max, threshold, .. }) => {
                                row.lambda_max = Some(lambda_max);
                                row.aeos_threshold = Some(threshold);
                                max_lambda = Some(max_lambda.map_or(lambda_max, |m: f64| m.max(lambda_max)));
                            }
                            Err(ProbeError::NonFiniteGradient) => {
                                lp.diverge(format!("non-finite Hessian-vector product at step {step}"))
                            }
                            Err(e) => return Err(e.into()),
                        }
                    }
                }
                Err(e) if is_non_finite(&e) => lp.diverge(format!("{e} at step {step}")),
                Err(e) => return Err(e.into()),
            }
        }
        lp.train.push(loss, acc);
        lp.record(row)?;
        if lp.divergence.is_some() {
            stop = StopReason::Diverged;
            break;
        }
        if cfg.stop.loss_below.is_some_and(|t| loss < t) {
            stop = StopReason::LossThreshold;
            break;
        }
        if let (Some(t), Some(a)) = (cfg.stop.accuracy_above, acc) {
            if a >= t {
                stop = StopReason::AccuracyThreshold;
                break;
            }
        }
        if step % epoch_steps == 0 {
            lp.evaluate(step, epoch, &theta)?;
            last_eval = step;
            if lp.divergence.is_some() {
                stop = StopReason::Diverged;
                break;
            }
        }
    }
    if stop != StopReason::Diverged && last_eval != steps_done {
        let epoch = steps_done.saturating_sub(1) / epoch_steps;
        lp.evaluate(steps_done, epoch, &theta)?;
        if lp.divergence.is_some() {
            stop = StopReason::Diverged;
        }
    }
    if let Some(w) = lp.writer.take() {
        w.finish()?;
    }

    let hash = config_hash(cfg);
    let diverged = lp.divergence.is_some();
    let checkpoint = (!diverged).then(|| Checkpoint {
        step: steps_done,
        effective_lr: last_lr,
        params: theta.clone(),
        optimizer: cfg.optimizer.clone(),
        state: opt.state().clone(),
        config_hash: hash.clone(),
    });
    let summary = RunSummary {
        name: cfg.name.clone(),
        optimizer: cfg.optimizer.variant.name().to_string(),
        config_hash: hash,
        steps_executed: steps_done,
        final_train_loss: lp.train.last,
        best_train_loss: lp.train.best,
        final_val_loss: lp.val.last,
        best_val_loss: lp.val.best,
        final_test_loss: lp.test.last,
        best_test_loss: lp.test.best,
        final_train_accuracy: lp.train.last_acc,
        final_val_accuracy: lp.val.last_acc,
        max_lambda,
        diverged,
        divergence: lp.divergence.take(),
        stop_reason: stop,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        trace_path: cfg.output.clone(),
    };
    if let Some(p) = &cfg.output {
        write_json(&summary_path(p), &summary)?;
        if let Some(c) = &checkpoint {
            write_json(&checkpoint_path(p), c)?;
        }
    }
    Ok(RunOutput { summary, trace: lp.rows, params: theta, checkpoint })
}

/// One-shot sharpness at a checkpoint, or at the initial parameters with
/// an empty optimizer state when no checkpoint is given.
pub fn probe_checkpoint(cfg: &ExperimentConfig, ckpt: Option<&Checkpoint>) -> Result<ProbeReading, HarnessError> {
    let objs = build_objectives(cfg)?;
    let (theta, opt, eta) = match ckpt {
        Some(c) => {
            if c.params.len() != objs.train.dim() {
                return Err(HarnessError::Config(format!(
                    "checkpoint has {} parameters, objective has {}",
                    c.params.len(),
                    objs.train.dim()
                )));
            }
            (c.params.clone(), Optimizer::with_state(c.optimizer.clone(), c.state.clone())?, c.effective_lr)
        }
        None => {
            let dim = objs.init.len();
            (objs.init.clone(), Optimizer::new(cfg.optimizer.clone(), dim)?, cfg.optimizer.alpha0)
        }
    };
    let mut probe = SharpnessProbe::new(crate::probes::ProbeConfig { enabled: true, ..cfg.probe.clone() })?;
    Ok(probe.measure(objs.train.as_ref(), &theta, None, &opt, eta)?)
}
