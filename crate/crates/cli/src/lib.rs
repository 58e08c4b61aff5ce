//! CLI entry points, exposed as a library so integration tests can drive the
//! commands in-process.

pub mod commands;
pub mod config;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(
    name = "pathchoice",
    about = "Estimate metro path choices from smart-card data",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the fixed-point estimation on AFC data.
    Estimate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the loading model once under a given share table.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate synthetic AFC data from a toy preset.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Dispatch a parsed command line. Returns the process exit code:
/// 0 success, 1 configuration/validation failure, 2 solver failure.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Estimate { config, out, seed } => commands::cmd_estimate(config, out, *seed),
        Command::Simulate { config, out, seed } => commands::cmd_simulate(config, out, *seed),
        Command::Synth { config, out, seed } => commands::cmd_synth(config, out, *seed),
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error[{}]: {err}", err.module());
            if err.is_solver_failure() {
                2
            } else {
                1
            }
        }
    }
}
