mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fisel::selection::Grain;
use fisel::trainer::Split;

/// Hybrid-grained feature interaction selection for deep sparse networks.
#[derive(Debug, Parser)]
#[command(name = "fisel", version)]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set train.lr_model=0.01`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Seed for splits, initialization, batching and synthetic data.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Restrict the selection grain: field, value or hybrid.
    #[arg(long, global = true)]
    pub grain: Option<Grain>,
    /// Split used by `evaluate`: train, val or test.
    #[arg(long, global = true)]
    pub split: Option<Split>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the vocabulary and encode the train/val/test splits.
    Preprocess,
    /// Train the plain network with every interaction kept.
    Baseline,
    /// Search the interaction selection.
    Search,
    /// Freeze a searched selection and retrain the model.
    Retrain {
        /// Search checkpoint; defaults to the one under the output directory.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a checkpoint and emit metric and keep-ratio reports.
    Evaluate {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
    /// Write a synthetic planted-interaction dataset.
    Synth,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &fisel::Error) -> u8 {
    use fisel::Error::*;
    match e {
        Config(_) => 1,
        Data { .. } | Dataset(_) | Io { .. } => 2,
        _ => 3,
    }
}
