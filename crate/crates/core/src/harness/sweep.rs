use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use super::run::{run_experiment, RunSummary};
use super::trace::TraceFormat;
use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Distribution {
    LogUniform { min: f64, max: f64 },
    Uniform { min: f64, max: f64 },
    /// Inclusive on both ends.
    IntUniform { min: i64, max: i64 },
    Choice { values: Vec<toml::Value> },
}

impl Distribution {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        match self {
            Distribution::LogUniform { min, max } if !(*min > 0.0 && min < max && max.is_finite()) => {
                bad(format!("log-uniform needs 0 < min < max, got [{min}, {max}]"))
            }
            Distribution::Uniform { min, max } if !(min < max && min.is_finite() && max.is_finite()) => {
                bad(format!("uniform needs min < max, got [{min}, {max}]"))
            }
            Distribution::IntUniform { min, max } if min >= max => {
                bad(format!("int-uniform needs min < max, got [{min}, {max}]"))
            }
            Distribution::Choice { values } if values.is_empty() => bad("choice needs at least one value".into()),
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> toml::Value {
        match self {
            Distribution::LogUniform { min, max } => {
                toml::Value::Float(rng.random_range(min.ln()..max.ln()).exp().clamp(*min, *max))
            }
            Distribution::Uniform { min, max } => toml::Value::Float(rng.random_range(*min..*max)),
            Distribution::IntUniform { min, max } => toml::Value::Integer(rng.random_range(*min..=*max)),
            Distribution::Choice { values } => values[rng.random_range(0..values.len())].clone(),
        }
    }
}

/// A swept key, addressed by its dotted path in the experiment config,
/// e.g. `optimizer.alpha0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpec {
    pub path: String,
    pub dist: Distribution,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// Lowest validation loss seen during the run.
    #[default]
    BestValLoss,
    FinalValLoss,
    BestTrainLoss,
    FinalTrainLoss,
}

impl Metric {
    /// Falls back to the training loss when the run has no validation split.
    pub fn of(self, s: &RunSummary) -> Option<f64> {
        let v = match self {
            Metric::BestValLoss => s.best_val_loss.or(s.best_train_loss),
            Metric::FinalValLoss => s.final_val_loss.or(s.final_train_loss),
            Metric::BestTrainLoss => s.best_train_loss,
            Metric::FinalTrainLoss => s.final_train_loss,
        };
        v.filter(|x| x.is_finite() && !s.diverged)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub metric: Metric,
    #[serde(default = "yes")]
    pub parallel: bool,
    /// Directory for trial traces and the manifest.
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Base experiment file, relative to the sweep file.
    #[serde(default)]
    pub base_config: Option<PathBuf>,
    /// Inline base experiment.
    #[serde(default)]
    pub base: Option<ExperimentConfig>,
    #[serde(rename = "param", default)]
    pub params: Vec<ParamSpec>,
}

fn yes() -> bool {
    true
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.trials == 0 {
            return Err(HarnessError::Config("a sweep needs at least one trial".into()));
        }
        self.params.iter().try_for_each(|p| p.dist.validate())
    }

    /// Reads a sweep file and resolves its base experiment.
    pub fn load(path: &Path) -> Result<(Self, ExperimentConfig), HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| HarnessError::ConfigRead { path: path.to_path_buf(), source })?;
        let mut spec: SweepSpec =
            toml::from_str(&text).map_err(|source| HarnessError::Toml { path: path.to_path_buf(), source })?;
        spec.validate()?;
        let dir = path.parent().unwrap_or(Path::new(""));
        let base = match (spec.base.take(), &spec.base_config) {
            (Some(mut b), None) => {
                b.validate()?;
                b.rebase_dataset_paths(dir);
                b
            }
            (None, Some(p)) => ExperimentConfig::load(&dir.join(p))?,
            _ => return Err(HarnessError::Config("set exactly one of base and base_config".into())),
        };
        Ok((spec, base))
    }
}

/// Writes `value` at dotted `path` of `cfg` and re-validates.
pub fn apply_param(cfg: &ExperimentConfig, path: &str, value: &toml::Value) -> Result<ExperimentConfig, HarnessError> {
    let mut root = toml::Value::try_from(cfg).map_err(|e| HarnessError::Config(e.to_string()))?;
    let keys: Vec<&str> = path.split('.').collect();
    let (last, parents) = keys.split_last().ok_or_else(|| HarnessError::Config("empty parameter path".into()))?;
    let mut node = &mut root;
    for k in parents {
        let table = node.as_table_mut().ok_or_else(|| HarnessError::Config(format!("{path}: {k} is not a table")))?;
        node = table.entry(k.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
    }
    node.as_table_mut()
        .ok_or_else(|| HarnessError::Config(format!("{path} does not address a table entry")))?
        .insert(last.to_string(), value.clone());
    let out: ExperimentConfig =
        root.try_into().map_err(|e: toml::de::Error| HarnessError::Config(format!("{path}: {e}")))?;
    out.validate()?;
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepTrial {
    pub rank: usize,
    pub trial: usize,
    pub params: Vec<(String, toml::Value)>,
    #[serde(skip)]
    pub config: ExperimentConfig,
    pub trace: Option<PathBuf>,
    pub metric: Option<f64>,
    pub summary: Option<RunSummary>,
    /// Set when the trial failed before producing a summary.
    pub error: Option<String>,
}

fn trace_name(i: usize, format: TraceFormat) -> String {
    let ext = match format {
        TraceFormat::Csv => "csv",
        TraceFormat::Jsonl => "jsonl",
    };
    format!("trial-{i:03}.{ext}")
}

/// Samples `space.trials` configs, runs them and ranks them by the metric.
/// Divergent or failed trials rank last, ties break on trial index.
pub fn random_search(space: &SweepSpec, base: &ExperimentConfig) -> Result<Vec<SweepTrial>, HarnessError> {
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(space.seed);
    let mut planned = Vec::with_capacity(space.trials);
    for i in 0..space.trials {
        let mut cfg = base.clone();
        let mut params = Vec::with_capacity(space.params.len());
        for p in &space.params {
            let v = p.dist.sample(&mut rng);
            cfg = apply_param(&cfg, &p.path, &v)?;
            params.push((p.path.clone(), v));
        }
        cfg.output = space.output.as_ref().map(|d| d.join(trace_name(i, cfg.format)));
        cfg.name = Some(format!("trial-{i:03}"));
        planned.push((i, params, cfg));
    }
    if let Some(dir) = &space.output {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }

    let run = |(i, params, cfg): (usize, Vec<(String, toml::Value)>, ExperimentConfig)| {
        let result = run_experiment(&cfg);
        if let Err(e) = &result {
            if e.is_io() {
                return Err(HarnessError::Config(format!("trial {i}: {e}")));
            }
        }
        let (summary, error) = match result {
            Ok(out) => (Some(out.summary), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let metric = summary.as_ref().and_then(|s| space.metric.of(s));
        Ok(SweepTrial { rank: 0, trial: i, params, trace: cfg.output.clone(), config: cfg, metric, summary, error })
    };
    let results: Vec<Result<SweepTrial, HarnessError>> = if space.parallel {
        planned.into_par_iter().map(run).collect()
    } else {
        planned.into_iter().map(run).collect()
    };
    let mut trials = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    trials.sort_by(|a, b| match (a.metric, b.metric) {
        (Some(x), Some(y)) => x.total_cmp(&y).then(a.trial.cmp(&b.trial)),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => a.trial.cmp(&b.trial),
    });
    for (rank, t) in trials.iter_mut().enumerate() {
        t.rank = rank + 1;
    }
    if let Some(dir) = &space.output {
        let path = dir.join("manifest.json");
        let manifest = serde_json::json!({ "seed": space.seed, "metric": space.metric, "trials": trials });
        let text = serde_json::to_string_pretty(&manifest).expect("serializable") + "\n";
        std::fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
    }
    Ok(trials)
}
