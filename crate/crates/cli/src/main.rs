//! `mos`: config-driven runner for group-based OOD detection experiments.
//!
//! Exit codes: 0 on success, 2 on configuration or validation errors, 1 on
//! any other failure.

mod ablate;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "mos", version, about = "Group-based OOD detection with the minimum others score")]
struct Cli {
    /// Run configuration (`key = value` lines under `[section]` headers).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Skip ablation jobs already recorded in the output journal.
    #[arg(long, global = true)]
    resume: bool,
    /// Override a config key, e.g. `--set bench.dim=32`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark.
    Gen,
    /// Build a class partition (taxonomy, cluster or random).
    Group,
    /// Train a flat or grouped linear head.
    Train,
    /// Score feature files with one or more methods.
    Score,
    /// Evaluate in- vs out-distribution score files.
    Eval,
    /// Run a class-count sweep or grouping ablation.
    Ablate,
}

fn resolve(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(s) = cli.seed {
        cfg.set("run", "seed", &s.to_string())?;
    }
    if let Some(o) = &cli.out {
        cfg.set("run", "out", &o.to_string_lossy())?;
    }
    cfg.seed()?;
    Ok(cfg)
}

fn is_validation(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.downcast_ref::<ConfigError>().is_some() || e.downcast_ref::<mos_core::Error>().is_some_and(|e| e.is_validation())
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = resolve(&cli).map_err(anyhow::Error::from).and_then(|cfg| match cli.command {
        Command::Gen => commands::gen(&cfg),
        Command::Group => commands::group(&cfg),
        Command::Train => commands::train_cmd(&cfg),
        Command::Score => commands::score(&cfg),
        Command::Eval => commands::eval(&cfg),
        Command::Ablate => ablate::ablate(&cfg, cli.resume),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_validation(&e) { 2 } else { 1 })
        }
    }
}
