mod commands;
mod config;
mod manifest;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::commands::Inputs;
use crate::config::{parse_set, Config};
use crate::manifest::RunManifest;

/// Pruning, low-rank decomposition and keyword-spotting experiments on small feedforward networks.
#[derive(Parser)]
#[command(name = "prunekit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat `key = value` config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for every output, including manifest.json
    #[arg(long, default_value = "run")]
    out_dir: PathBuf,
    /// Overrides one config key; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic frame datasets and keyword streams
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train a dense baseline
    Train {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Iterative prune and retrain
    Prune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train a dense network with the parameter count of a sparse model
    BaselinePs {
        #[arg(long)]
        sparse_model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Replace layers by trained low-rank factors
    Decompose {
        #[arg(long)]
        model: PathBuf,
        /// Needed for fine-tuning and for the accuracy report
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Frame accuracy of a model on a dataset
    EvalFrames {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Keyword spotting ROC over the streams written by gen-data
    EvalKws {
        #[arg(long)]
        kws_dir: PathBuf,
        /// Without a model, ground-truth posteriors are decoded
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Structure, remain rates, parameter counts and size estimates
    Inspect {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Comma-separated layer sizes, e.g. 858,512,512,512,512,3
        #[arg(long)]
        arch: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Re-run a command from its manifest
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        /// Defaults to the recorded output directory
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn collect(pairs: &[(&str, &Option<PathBuf>)]) -> Inputs {
    pairs
        .iter()
        .filter_map(|(k, v)| v.as_ref().map(|p| (k.to_string(), p.clone())))
        .collect()
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::fs::canonicalize(p).with_context(|| format!("input {} not found", p.display()))
}

fn execute(name: &str, cfg: &Config, inputs: &Inputs, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let inputs: Inputs = inputs
        .iter()
        .map(|(k, p)| Ok((k.clone(), absolute(p)?)))
        .collect::<Result<_>>()?;
    let manifest = RunManifest {
        command: name.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.get("seed")?,
        config: cfg.snapshot().clone(),
        inputs: inputs
            .iter()
            .map(|(k, p)| (k.clone(), p.display().to_string()))
            .collect(),
        out_dir: absolute(out_dir)?.display().to_string(),
    };
    manifest.write(out_dir)?;
    commands::run(name, cfg, &inputs, out_dir)
}

fn fresh(name: &str, common: Common, mut inputs: Inputs, extra_sets: Vec<(String, String)>) -> Result<()> {
    let spec = commands::spec(name)?;
    let mut sets = common.sets.iter().map(|s| parse_set(s)).collect::<Result<Vec<_>>>()?;
    sets.extend(extra_sets);
    let cfg = Config::resolve(spec.defaults, common.config.as_deref(), &sets, common.seed)?;
    inputs.retain(|_, p| !p.as_os_str().is_empty());
    execute(name, &cfg, &inputs, &common.out_dir)
}

fn replay(manifest: &Path, out_dir: Option<PathBuf>) -> Result<()> {
    let m = RunManifest::read(manifest)?;
    let spec = commands::spec(&m.command)?;
    let cfg = Config::from_snapshot(spec.defaults, &m.config)?;
    let inputs: BTreeMap<String, PathBuf> = m.inputs.iter().map(|(k, v)| (k.clone(), PathBuf::from(v))).collect();
    let out = out_dir.unwrap_or_else(|| PathBuf::from(&m.out_dir));
    execute(&m.command, &cfg, &inputs, &out)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common } => fresh("gen-data", common, Inputs::new(), Vec::new()),
        Command::Train { data, common } => fresh("train", common, collect(&[("data", &Some(data))]), Vec::new()),
        Command::Prune { model, data, common } => fresh(
            "prune",
            common,
            collect(&[("model", &Some(model)), ("data", &Some(data))]),
            Vec::new(),
        ),
        Command::BaselinePs {
            sparse_model,
            data,
            common,
        } => fresh(
            "baseline-ps",
            common,
            collect(&[("sparse_model", &Some(sparse_model)), ("data", &Some(data))]),
            Vec::new(),
        ),
        Command::Decompose { model, data, common } => fresh(
            "decompose",
            common,
            collect(&[("model", &Some(model)), ("data", &data)]),
            Vec::new(),
        ),
        Command::EvalFrames { model, data, common } => fresh(
            "eval-frames",
            common,
            collect(&[("model", &Some(model)), ("data", &Some(data))]),
            Vec::new(),
        ),
        Command::EvalKws { kws_dir, model, common } => fresh(
            "eval-kws",
            common,
            collect(&[("kws_dir", &Some(kws_dir)), ("model", &model)]),
            Vec::new(),
        ),
        Command::Inspect { model, arch, common } => fresh(
            "inspect",
            common,
            collect(&[("model", &model)]),
            arch.map(|a| vec![("arch".to_string(), a)]).unwrap_or_default(),
        ),
        Command::Replay { manifest, out_dir } => replay(&manifest, out_dir),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
