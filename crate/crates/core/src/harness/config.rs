use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use super::trace::TraceFormat;
use super::HarnessError;
use crate::models::{Activation, Loss};
use crate::optimizers::{OptimizerConfig, SchedulerConfig};
use crate::probes::ProbeConfig;

/// One training run, as read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    /// Step budget. Exactly one of `steps` and `epochs` is set.
    #[serde(default)]
    pub steps: Option<u64>,
    #[serde(default)]
    pub epochs: Option<u64>,
    /// Minibatch size; unset means full batch.
    #[serde(default)]
    pub batch_size: Option<usize>,
    pub objective: ObjectiveSpec,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub scheduler: SchedulerConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub stop: StopRules,
    /// Trace file; the summary and checkpoint are written next to it.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub format: TraceFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    Quadratic {
        #[serde(default)]
        diag: Option<Vec<f64>>,
        #[serde(default)]
        matrix: Option<Vec<Vec<f64>>>,
        init: Vec<f64>,
    },
    Rosenbrock {
        #[serde(default = "rosenbrock_start")]
        init: [f64; 2],
    },
    Mlp {
        hidden: Vec<usize>,
        #[serde(default = "default_activation")]
        activation: Activation,
        #[serde(default = "default_loss")]
        loss: Loss,
        /// Weight init seed; defaults to the run seed.
        #[serde(default)]
        init_seed: Option<u64>,
        dataset: DatasetSpec,
        #[serde(default = "default_val_fraction")]
        val_fraction: f64,
        #[serde(default)]
        test_fraction: f64,
    },
}

fn rosenbrock_start() -> [f64; 2] {
    [-1.2, 1.0]
}

fn default_activation() -> Activation {
    Activation::Tanh
}

fn default_loss() -> Loss {
    Loss::CrossEntropy
}

fn default_val_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    TwoMoons {
        n: usize,
        #[serde(default = "default_noise")]
        noise: f64,
    },
    Blobs {
        n: usize,
        classes: usize,
        dim: usize,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        /// Keep only the first `limit` samples.
        #[serde(default)]
        limit: Option<usize>,
    },
}

fn default_noise() -> f64 {
    0.1
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StopRules {
    /// Stop once the training loss of a step falls below this.
    pub loss_below: Option<f64>,
    /// Stop once the training accuracy of a step reaches this.
    pub accuracy_above: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|source| HarnessError::Toml { path: origin.to_path_buf(), source })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config. Relative dataset paths are taken
    /// relative to the config file.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| HarnessError::ConfigRead { path: path.to_path_buf(), source })?;
        let mut cfg = Self::from_toml_str(&text, path)?;
        if let Some(dir) = path.parent() {
            cfg.rebase_dataset_paths(dir);
        }
        Ok(cfg)
    }

    pub fn rebase_dataset_paths(&mut self, dir: &Path) {
        if let ObjectiveSpec::Mlp { dataset: DatasetSpec::Idx { images, labels, .. }, .. } = &mut self.objective {
            for p in [images, labels] {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        match (self.steps, self.epochs) {
            (Some(0), _) | (_, Some(0)) => return bad("budget must be positive".into()),
            (Some(_), Some(_)) => return bad("set either steps or epochs, not both".into()),
            (None, None) => return bad("a steps or epochs budget is required".into()),
            _ => {}
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be at least 1".into());
        }
        self.optimizer.validate()?;
        self.scheduler.validate(self.optimizer.alpha0)?;
        if self.probe.every == 0 || self.probe.max_iters == 0 || !(self.probe.tol > 0.0) {
            return bad("probe every, max_iters and tol must be positive".into());
        }
        if let Some(h) = self.probe.fd_step {
            if !(h > 0.0) {
                return bad(format!("probe fd_step must be positive, got {h}"));
            }
        }
        if let Some(l) = self.stop.loss_below {
            if l.is_nan() {
                return bad("stop.loss_below is NaN".into());
            }
        }
        if let Some(a) = self.stop.accuracy_above {
            if !(0.0..=1.0).contains(&a) {
                return bad(format!("stop.accuracy_above must lie in [0, 1], got {a}"));
            }
        }
        match &self.objective {
            ObjectiveSpec::Quadratic { diag, matrix, init } => {
                let dim = match (diag, matrix) {
                    (Some(d), None) => d.len(),
                    (None, Some(m)) => m.len(),
                    _ => return bad("quadratic needs exactly one of diag and matrix".into()),
                };
                if dim == 0 || init.len() != dim {
                    return bad(format!("quadratic init has {} entries for dimension {dim}", init.len()));
                }
            }
            ObjectiveSpec::Rosenbrock { .. } => {}
            ObjectiveSpec::Mlp { hidden, val_fraction, test_fraction, dataset, .. } => {
                if hidden.contains(&0) {
                    return bad("hidden layer sizes must be positive".into());
                }
                let ok = |f: f64| (0.0..1.0).contains(&f);
                if !ok(*val_fraction) || !ok(*test_fraction) || val_fraction + test_fraction >= 1.0 {
                    return bad("val_fraction and test_fraction must be in [0, 1) and sum below 1".into());
                }
                if let DatasetSpec::TwoMoons { noise, .. } = dataset {
                    if !(*noise >= 0.0) {
                        return bad("two-moons noise must be nonnegative".into());
                    }
                }
            }
        }
        Ok(())
    }

    /// Checks that referenced dataset files exist.
    pub fn check_paths(&self) -> Result<(), HarnessError> {
        if let ObjectiveSpec::Mlp { dataset: DatasetSpec::Idx { images, labels, .. }, .. } = &self.objective {
            for p in [images, labels] {
                if !p.is_file() {
                    return Err(HarnessError::Config(format!("dataset file {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    /// Canonical TOML rendering.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }
}
