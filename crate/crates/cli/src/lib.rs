//! The `misr` command-line pipeline: simulate or ingest a dataset, admit
//! members, split, score the bicubic baseline, train the network, run
//! inference and write the comparison report.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::RunConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "misr", version, about = "Multi-image super-resolution pipeline")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(short, long, global = true, default_value = "misr.toml")]
    pub config: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset in ingestion layout plus its manifest.
    Simulate,
    /// Admit or reject every tile under the data root.
    Assemble,
    /// Assign admitted members to train and test, keeping tiles together.
    Split,
    /// Score bicubic upscaling on the test members.
    Baseline,
    /// Train the network on the train members.
    Train,
    /// Write super-resolved images for the test members.
    Infer,
    /// Compare network and bicubic on the test members.
    Evaluate,
}

pub fn run(command: Command, cfg: &RunConfig) -> Result<String, CliError> {
    match command {
        Command::Simulate => commands::simulate(cfg),
        Command::Assemble => commands::assemble(cfg),
        Command::Split => commands::split(cfg),
        Command::Baseline => commands::baseline(cfg),
        Command::Train => commands::train_cmd(cfg),
        Command::Infer => commands::infer_cmd(cfg),
        Command::Evaluate => commands::evaluate(cfg),
    }
}
