//! `hedgesim`: run hedging studies from a JSON config or a preset.
//!
//! Exit status: 0 success, 2 invalid configuration or output directory,
//! 3 numerical failure, 4 a statistical invariant failed (reports are still
//! written).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use crate::commands::{execute, Command};
use crate::config::{Preset, RunConfig};
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "hedgesim", version, about = "Monte Carlo studies of adaptive delta hedging")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration.
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,

    /// Built-in configuration.
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,

    /// Parent directory of the result directory; overrides `output.directory`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Master seed; overrides `rng.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true, env = "HEDGESIM_WORKERS")]
    workers: Option<usize>,
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match (&cli.config, cli.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(p)) => RunConfig::preset(p),
        (None, None) => return Err(CliError::Config("pass --config <path> or --preset <name>".into())),
    };
    if let Some(seed) = cli.seed {
        cfg.rng.seed = seed;
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(CliError::Config("--workers must be at least 1".into()));
        }
        pool = pool.num_threads(w);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))?;
    let (dir, manifest) = pool.install(|| execute(cli.command, &cfg, cli.out.clone()))?;
    println!("{}", dir.display());
    eprintln!(
        "hedgesim: wrote {} files, config {}",
        manifest.files.len() + 1,
        &manifest.config_hash[..12]
    );
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hedgesim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
