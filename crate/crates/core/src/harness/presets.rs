//! Experiment presets shipped with the crate.

use std::path::Path;

use super::config::ExperimentConfig;
use super::HarnessError;

macro_rules! presets {
    ($($name:literal),* $(,)?) => {
        const PRESETS: &[(&str, &str)] = &[
            $(($name, include_str!(concat!("../../presets/", $name, ".toml")))),*
        ];
    };
}

presets!(
    "cifar-vradam",
    "cifar-adamw",
    "cifar-sgd",
    "cifar-rmsprop",
    "wikitext-vradam",
    "wikitext-adam",
    "diffusion-vradam",
    "diffusion-adam",
    "diffusion-sgd",
    "diffusion-rmsprop",
    "gflownet-vradam",
    "gflownet-adamw",
    "gflownet-sgd",
    "gflownet-rmsprop",
    "eos-vradam",
    "eos-adam",
);

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

/// The preset's TOML text as shipped.
pub fn preset_source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn load_preset(name: &str) -> Result<ExperimentConfig, HarnessError> {
    let src = preset_source(name).ok_or_else(|| HarnessError::Config(format!("unknown preset {name:?}")))?;
    ExperimentConfig::from_toml_str(src, Path::new(name))
}
