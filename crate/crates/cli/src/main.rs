mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{BuildArgs, EstimateArgs, EvaluateArgs, MetricsArgs, TrainArgs};

/// Reference-free estimation of separation quality metrics.
#[derive(Debug, Parser)]
#[command(name = "refess", version, about)]
struct Cli {
    /// TOML file with one table per subcommand; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<std::path::PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labelled synthetic corpus.
    BuildDataset(BuildArgs),
    /// Train an estimator.
    Train(TrainArgs),
    /// Score a checkpoint on a labelled split.
    Evaluate(EvaluateArgs),
    /// Estimate metrics for one triplet without references.
    Estimate(EstimateArgs),
    /// Reference-based SI-SNR and WER.
    Metrics(MetricsArgs),
}

/// Process exit codes.
pub mod exit {
    pub const USAGE: u8 = 1;
    pub const DATA: u8 = 2;
    pub const NUMERICAL: u8 = 3;
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("REFESS_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(exit::USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let file = match cli.config.as_deref().map(config::ConfigFile::read).transpose() {
        Ok(f) => f.unwrap_or_default(),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit::USAGE);
        }
    };
    let result = match cli.command {
        Command::BuildDataset(a) => commands::build_dataset(a, file.build_dataset),
        Command::Train(a) => commands::train(a, file.train),
        Command::Evaluate(a) => commands::evaluate(a, file.evaluate),
        Command::Estimate(a) => commands::estimate(a),
        Command::Metrics(a) => commands::metrics(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
