//! `qffl`: generate synthetic federated data, train, sweep q and report.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage or
//! validation errors. `LOG_LEVEL` selects `quiet` (default), `info` or `debug`.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;

#[derive(Parser, Debug)]
#[command(name = "qffl", version, about = "Fair federated learning simulations over linear models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML experiment config; flags override its keys
    #[arg(long)]
    config: Option<PathBuf>,

    /// Seed override
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset as a CSV manifest with splits
    Generate {
        #[command(flatten)]
        common: Common,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model and write its run report
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset manifest; a synthetic dataset is generated from the config otherwise
        #[arg(long)]
        data: Option<PathBuf>,
        /// Run report path (JSON)
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every (q, seed) pair and select q on validation data
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate run or sweep reports into mean±std tables
    Report {
        /// Run or sweep report files
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Write the table as CSV
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write a histogram CSV of the pooled per-device test accuracies
        #[arg(long)]
        histogram: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        bins: usize,
    },
    /// Rounds-versus-objective curves of q-FedAvg and q-FedSGD on one objective
    Efficiency {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Curve CSV path
        #[arg(long)]
        out: PathBuf,
        /// Label written in the dataset column
        #[arg(long, default_value = "synthetic")]
        label: String,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<qffl::Error> for CliError {
    fn from(e: qffl::Error) -> Self {
        match e {
            qffl::Error::InvalidConfig(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn init_logging() -> Result<(), CliError> {
    let level = match std::env::var("LOG_LEVEL").as_deref() {
        Err(_) | Ok("") | Ok("quiet") => log::LevelFilter::Error,
        Ok("info") => log::LevelFilter::Info,
        Ok("debug") => log::LevelFilter::Debug,
        Ok(other) => {
            return Err(CliError::Usage(format!(
                "LOG_LEVEL must be quiet, info or debug, got '{other}'"
            )))
        }
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    Ok(())
}

fn load_config(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.override_seed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    init_logging()?;
    match cli.command {
        Command::Generate { common, out } => commands::generate(&load_config(&common)?, &out),
        Command::Train { common, data, out } => {
            commands::train(&load_config(&common)?, data.as_deref(), &out)
        }
        Command::Sweep { common, data, out } => {
            commands::sweep(&load_config(&common)?, data.as_deref(), &out)
        }
        Command::Report { files, out, histogram, bins } => {
            report::report(&files, out.as_deref(), histogram.as_deref(), bins)
        }
        Command::Efficiency { common, data, out, label } => {
            commands::efficiency(&load_config(&common)?, data.as_deref(), &out, &label)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
