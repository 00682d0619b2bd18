//! Command-line entry point.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure.

use chaos_spde_cli::config::ExperimentConfig;
use chaos_spde_cli::{pipeline, CliError};
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "chaos-spde", about = "SPDE surrogate experiments via chaos expansions")]
struct Cli {
    /// Path to the flat key=value configuration file.
    #[arg(long, global = true, default_value = "experiment.cfg")]
    config: PathBuf,
    /// Output directory for all artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed from the configuration file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Writes the dataset descriptor and reference targets.
    Generate,
    /// Trains surrogates and writes model files plus loss traces.
    Train,
    /// Writes metrics and plot-surface CSVs for trained models.
    Evaluate,
    /// Writes the truncation-error rate report.
    Rates,
    /// Runs generate, train, evaluate, and rates in sequence.
    All,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&cli.config).map_err(|e| {
        CliError::Config(format!("cannot read config {}: {e}", cli.config.display()))
    })?;
    let cfg = ExperimentConfig::parse(&text, cli.seed)?;
    match cli.command {
        Command::Generate => pipeline::cmd_generate(&cfg, &cli.out),
        Command::Train => pipeline::cmd_train(&cfg, &cli.out),
        Command::Evaluate => pipeline::cmd_evaluate(&cfg, &cli.out),
        Command::Rates => pipeline::cmd_rates(&cfg, &cli.out),
        Command::All => pipeline::cmd_all(&cfg, &cli.out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{err}");
            ExitCode::from(err.exit_code())
        }
    }
}
