//! Experiment driver around the ddmpc library. Every subcommand reads a
//! flat `key = value` config file, derives all randomness from one root
//! seed, and writes its artifacts into the output directory.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "ddmpc", version, about = "Data-driven predictive control experiments")]
pub struct Cli {
    /// Experiment configuration (flat `key = value` text file).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root random seed; overrides the `seed` key in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the `out` key in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an excited trajectory, write it as CSV, and report the
    /// excitation order of the recorded input.
    GenerateData,
    /// Run a closed loop and write the trace plus a summary.
    Run,
    /// Sweep a noise or disturbance level and write a report and verdict.
    Sweep,
    /// Check whether a candidate trajectory lies in the span of the
    /// recorded data windows.
    VerifyLemma,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(&cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}
