//! The `vrlab` command line.
//!
//! Exit codes: 0 success, 1 config or usage error, 2 the run diverged,
//! 3 I/O failure writing outputs.

pub mod portrait;

use clap::{Parser, Subcommand, ValueEnum};
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use vrlab_core::harness::{
    load_checkpoint, load_preset, preset_names, preset_source, probe_checkpoint, random_search, run_experiment,
    ExperimentConfig, HarnessError, SweepSpec, TraceFormat,
};

use portrait::{Portrait, PortraitConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "vrlab", version, about = "Velocity-regularized optimizer laboratory")]
struct Cli {
    /// Override the seed of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path: trace file for `run`, directory for `sweep` and `portrait`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Trace format.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

impl From<Format> for TraceFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => TraceFormat::Csv,
            Format::Jsonl => TraceFormat::Jsonl,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one experiment config (a TOML file or a preset name).
    Run { config: String },
    /// Random hyperparameter search.
    Sweep { config: PathBuf },
    /// Vector field, continuous trajectory and discrete iterates of the quartic-kinetic flow.
    Portrait { config: Option<PathBuf> },
    /// One-shot sharpness of a config, optionally at a saved checkpoint.
    Probe {
        config: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Shipped experiment presets.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand, Debug)]
enum PresetAction {
    List,
    Show { name: String },
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        let code = if e.is_io() { EXIT_IO } else { EXIT_CONFIG };
        Failure { code, message: e.to_string() }
    }
}

fn config_error(message: String) -> Failure {
    Failure { code: EXIT_CONFIG, message }
}

fn io_error(path: &Path, e: std::io::Error) -> Failure {
    Failure { code: EXIT_IO, message: format!("I/O error on {}: {e}", path.display()) }
}

/// A config argument is a path, or a preset name when no such file exists.
fn load_experiment(arg: &str) -> Result<ExperimentConfig, HarnessError> {
    let path = Path::new(arg);
    if !path.exists() && preset_source(arg).is_some() {
        return load_preset(arg);
    }
    ExperimentConfig::load(path)
}

fn apply_overrides(cfg: &mut ExperimentConfig, cli: &Cli) {
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output = Some(o.clone());
    }
    if let Some(f) = cli.format {
        cfg.format = f.into();
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<i32, Failure> {
    let print = |out: &mut dyn Write, s: &str| {
        writeln!(out, "{s}").map_err(|e| io_error(Path::new("<stdout>"), e))
    };
    match &cli.command {
        Command::Run { config } => {
            let mut cfg = load_experiment(config)?;
            apply_overrides(&mut cfg, cli);
            let run = run_experiment(&cfg)?;
            print(out, &to_json(&run.summary))?;
            Ok(if run.summary.diverged { EXIT_DIVERGED } else { EXIT_OK })
        }
        Command::Sweep { config } => {
            let (mut spec, mut base) = SweepSpec::load(config)?;
            if let Some(s) = cli.seed {
                spec.seed = s;
            }
            if let Some(o) = &cli.out {
                spec.output = Some(o.clone());
            }
            if let Some(f) = cli.format {
                base.format = f.into();
            }
            let trials = random_search(&spec, &base)?;
            print(out, "rank\ttrial\tmetric\tdiverged\tparams")?;
            for t in &trials {
                let metric = t.metric.map_or("-".to_string(), |m| format!("{m:.6e}"));
                let diverged = t.summary.as_ref().is_none_or(|s| s.diverged);
                let params: Vec<String> = t.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
                print(out, &format!("{}\t{}\t{metric}\t{diverged}\t{}", t.rank, t.trial, params.join(" ")))?;
            }
            let all_diverged = trials.iter().all(|t| t.summary.as_ref().is_some_and(|s| s.diverged));
            Ok(if all_diverged { EXIT_DIVERGED } else { EXIT_OK })
        }
        Command::Portrait { config } => {
            let cfg = match config {
                Some(p) => {
                    let text = std::fs::read_to_string(p)
                        .map_err(|e| config_error(format!("cannot read config {}: {e}", p.display())))?;
                    toml::from_str::<PortraitConfig>(&text)
                        .map_err(|e| config_error(format!("invalid TOML in {}: {e}", p.display())))?
                }
                None => PortraitConfig::default(),
            };
            let p = Portrait::compute(&cfg).map_err(|e| config_error(e.to_string()))?;
            match &cli.out {
                Some(dir) => {
                    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
                    for (name, body) in [
                        ("field.csv", p.field_csv()),
                        ("trajectory.csv", p.trajectory_csv()),
                        ("discrete.csv", p.discrete_csv()),
                    ] {
                        let path = dir.join(name);
                        std::fs::write(&path, body).map_err(|e| io_error(&path, e))?;
                    }
                    let (vr, plain) = p.sign_changes();
                    print(out, &format!("sign changes: vrmomentum {vr}, momentum {plain}"))?;
                }
                None => print(out, p.field_csv().trim_end())?,
            }
            Ok(EXIT_OK)
        }
        Command::Probe { config, checkpoint } => {
            let mut cfg = load_experiment(config)?;
            apply_overrides(&mut cfg, cli);
            let ckpt = checkpoint.as_deref().map(load_checkpoint).transpose().map_err(|e| match e {
                HarnessError::Io { path, source } => config_error(format!("cannot read checkpoint {}: {source}", path.display())),
                other => other.into(),
            })?;
            let r = probe_checkpoint(&cfg, ckpt.as_ref())?;
            let report = serde_json::json!({
                "lambda_max": r.lambda_max,
                "aeos_threshold": r.threshold,
                "iterations": r.estimate.iterations_used,
                "residual": r.estimate.residual,
                "converged": r.estimate.converged,
            });
            print(out, &to_json(&report))?;
            Ok(EXIT_OK)
        }
        Command::Presets { action } => {
            match action {
                PresetAction::List => {
                    for n in preset_names() {
                        print(out, n)?;
                    }
                }
                PresetAction::Show { name } => {
                    let src = preset_source(name).ok_or_else(|| config_error(format!("unknown preset {name:?}")))?;
                    print(out, src.trim_end())?;
                }
            }
            Ok(EXIT_OK)
        }
    }
}

/// Runs the CLI with explicit streams and returns the exit code.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_CONFIG,
            };
            let target: &mut dyn Write = if code == EXIT_OK { out } else { err };
            let _ = write!(target, "{}", e.render());
            return code;
        }
    };
    match dispatch(&cli, out) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}
