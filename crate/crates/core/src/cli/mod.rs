//! Command-line pipeline: ingest, train, evaluate, mcs, attention, grid.
//!
//! Exit codes: 0 success, 1 operational error, 2 look-ahead violation.

mod commands;
pub mod config;
mod ingest;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use commands::{cmd_attention, cmd_evaluate, cmd_grid, cmd_ingest, cmd_mcs, cmd_train};
pub use config::{ExperimentConfig, GridConfig, ModelKind, ModelSpec};
pub use ingest::{build_dataset, IngestReport};

use crate::data::DataError;
use crate::eval::EvalError;
use crate::mcs::McsError;
use crate::train::TrainError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Mcs(#[from] McsError),
    #[error("look-ahead violation: {0}")]
    Integrity(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Integrity(_) => 2,
            _ => 1,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io(m) => CliError::Io(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

#[derive(Debug, Parser)]
#[command(name = "liqcast", version, about = "Liquidity-conditioned forecasting pipeline")]
pub struct Cli {
    /// Experiment config (TOML)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the aligned dataset and its look-ahead audit
    Ingest,
    /// Train models, one checkpoint per (model, horizon)
    Train {
        /// Only this model (default: every configured model)
        #[arg(long)]
        model: Option<String>,
        /// Only this horizon (default: every configured horizon)
        #[arg(long)]
        horizon: Option<usize>,
        /// Override max_epochs for every trained model
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Rolling-origin evaluation of every checkpoint on the test split
    Evaluate,
    /// Model confidence set per horizon from the evaluation errors
    Mcs,
    /// Mean cross-attention weight per exogenous column
    Attention {
        #[arg(long)]
        model: String,
        #[arg(long)]
        horizon: usize,
        #[arg(long, default_value_t = 0)]
        layer: usize,
    },
    /// Validation MSE over a hyperparameter grid
    Grid {
        /// Base model (default: first TimeXer model)
        #[arg(long)]
        model: Option<String>,
        /// Horizon (default: first configured horizon)
        #[arg(long)]
        horizon: Option<usize>,
        /// Stop after this many trials
        #[arg(long)]
        limit: Option<usize>,
    },
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(cli.config.as_deref(), cli.seed, cli.out)?;
    match cli.command {
        Command::Ingest => cmd_ingest(&cfg),
        Command::Train { model, horizon, epochs } => cmd_train(&cfg, model.as_deref(), horizon, epochs),
        Command::Evaluate => cmd_evaluate(&cfg),
        Command::Mcs => cmd_mcs(&cfg),
        Command::Attention { model, horizon, layer } => cmd_attention(&cfg, &model, horizon, layer),
        Command::Grid { model, horizon, limit } => cmd_grid(&cfg, model.as_deref(), horizon, limit),
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
