//! `telesto`: generate labeled KPI datasets, train and evaluate graph
//! classifiers, predict single windows and render comparison reports.
//!
//! Exit codes: 0 success, 2 configuration/usage errors, 3 data or shape
//! errors, 4 numerical failures.

mod commands;
mod manifest;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use telesto_core::Error as CoreError;
use telesto_sim::SimError;

#[derive(Parser)]
#[command(name = "telesto", version, about = "Anomaly classification on KPI window graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset (one directory per node group
    /// plus schedule.json).
    GenData(commands::gen_data::GenDataArgs),
    /// Train a model with leave-one-group-out cross-validation and write
    /// checkpoints, report.json/report.md and loss curves.
    Train(commands::train::TrainArgs),
    /// Classify one window CSV with a trained checkpoint.
    Predict(commands::predict::PredictArgs),
    /// Render a side-by-side comparison table from one or more report.json
    /// files.
    Report(commands::report::ReportArgs),
}

/// Error wrapper carrying the exit-code classification.
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::InvalidConfig(_) | CoreError::InvalidWindowing(_) => CliError::Usage(msg),
            CoreError::NonFiniteLoss { .. } => CliError::Numerical(msg),
            _ => CliError::Data(msg),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        let msg = e.to_string();
        match e {
            SimError::InvalidScenario(_)
            | SimError::InfeasibleTimeline(_)
            | SimError::UnknownAnomaly(_) => CliError::Usage(msg),
            SimError::Core(inner) => CliError::from(inner),
            _ => CliError::Data(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Dataset root fallback when a path flag is omitted.
pub fn data_dir_env() -> Option<PathBuf> {
    std::env::var_os("TELESTO_DATA_DIR").map(PathBuf::from)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(args) => commands::gen_data::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Predict(args) => commands::predict::run(args),
        Command::Report(args) => commands::report::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
