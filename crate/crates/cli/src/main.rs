use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

mod commands;
mod config;
mod exit;

use config::{CommonArgs, RunConfig};

/// Uncertainty estimation for question answering by asking the same model
/// many related questions and letting the answers argue.
#[derive(Debug, Parser)]
#[command(name = "dae", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build varied question sets for every dataset record.
    Generate,
    /// Interact, score, and decide for every query; generates question sets
    /// first unless --questions-in is given.
    Run,
    /// Compute metrics, AR curves and calibration bins from a run directory.
    Evaluate,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = RunConfig::resolve(&cli.common).and_then(|config| match cli.command {
        Command::Generate => commands::cmd_generate(&config),
        Command::Run => commands::cmd_run(&config),
        Command::Evaluate => commands::cmd_evaluate(&config),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
