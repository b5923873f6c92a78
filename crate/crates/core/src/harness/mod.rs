//! Experiment harness: configs, the seeded training loop, random search,
//! trace emission and the shipped presets.

mod config;
mod presets;
mod run;
mod sweep;
mod trace;

use std::path::PathBuf;
use thiserror::Error;

use crate::models::{IdxError, ModelError};
use crate::optimizers::OptimError;
use crate::probes::ProbeError;

pub use config::{DatasetSpec, ExperimentConfig, ObjectiveSpec, StopRules};
pub use presets::{load_preset, preset_names, preset_source};
pub use run::{
    build_objectives, config_hash, load_checkpoint, probe_checkpoint, run_experiment, Checkpoint, RunOutput,
    RunSummary, StopReason,
};
pub use sweep::{random_search, Distribution, Metric, ParamSpec, SweepSpec, SweepTrial};
pub use trace::{emit_trace, parse_csv, parse_jsonl, render_csv, render_jsonl, TraceFormat, TraceRecord, TRACE_HEADER};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("cannot read config {path}: {source}")]
    ConfigRead { path: PathBuf, source: std::io::Error },
    #[error("invalid TOML in {path}: {source}")]
    Toml { path: PathBuf, source: toml::de::Error },
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed trace: {0}")]
    Trace(String),
    #[error(transparent)]
    Optimizer(#[from] OptimError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Idx(#[from] IdxError),
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.into(), source }
    }

    /// True for failures writing outputs, as opposed to bad input.
    pub fn is_io(&self) -> bool {
        matches!(self, HarnessError::Io { .. })
    }
}
