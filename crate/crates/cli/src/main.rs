//! `dcl`: train contrastive encoders, probe them, and certify the bounds of
//! the debiased contrastive loss on synthetic worlds.
//!
//! Exit codes: 0 when every check passes, 1 when a check fails or training
//! diverges, 2 for configuration and input errors.

/// One CSV record from displayable fields.
macro_rules! row {
    ($($field:expr),* $(,)?) => {
        vec![$($field.to_string()),*]
    };
}

mod commands;
mod config;
mod error;
mod output;
mod world;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::verify::Check;
use config::Config;
use error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "dcl", version, about = "Debiased contrastive learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat `key = value` config file; must contain `version = 1`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides `seed` from the config and `--set`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Override a config key; repeatable, the last assignment wins.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train encoders and probe them; writes per-run logs, checkpoints and probe.csv.
    Train,
    /// Linear probe of a saved checkpoint.
    Probe,
    /// Emit bound certificates.
    Verify {
        #[arg(value_enum)]
        check: Check,
        /// Certify every (N, M) pair instead of zipping the lists.
        #[arg(long)]
        grid: bool,
    },
    /// Compare analytic and finite-difference gradients.
    Gradcheck,
    /// Write the world description and labelled samples.
    GenData,
}

fn load_config(cli: &Cli) -> CliResult<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    for kv in &cli.set {
        cfg.apply_override(kv)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("seed", seed.to_string());
    }
    cfg.check_version()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> CliResult<bool> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Train => commands::train::run(&cfg, &cli.out),
        Command::Probe => commands::probe::run(&cfg, &cli.out),
        Command::Verify { check, grid } => commands::verify::run(&cfg, *check, *grid, &cli.out),
        Command::Gradcheck => commands::gradcheck::run(&cfg, &cli.out),
        Command::GenData => commands::gendata::run(&cfg, &cli.out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("dcl: one or more checks failed; see {}", cli.out.join("report.json").display());
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("dcl: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
