//! `teletail` command-line driver.

mod checkpoint;
mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use crate::commands::{Command, Run};
use crate::config::ExperimentConfig;
use crate::error::CliError;

/// Fit and evaluate tail-dependence models on panel data.
#[derive(Debug, Parser)]
#[command(name = "teletail", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Parallel folds for `crossval`.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(args: Args) -> Result<Vec<PathBuf>, CliError> {
    let (mut cfg, config_bytes) = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = args.out {
        cfg.out_dir = out;
    }
    if args.workers == 0 {
        return Err(CliError::Config("--workers must be at least 1".into()));
    }
    let run = Run {
        cfg,
        config_bytes,
        workers: args.workers,
    };
    run.execute(args.command)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(outputs) => {
            for p in outputs {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("teletail: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
