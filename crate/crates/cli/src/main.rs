//! `mmce`: generate data, train, emit curves, evaluate and allocate.

mod commands;
mod config;
mod error;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::AllocateArgs;
use crate::config::RunConfig;
use crate::error::Result;

#[derive(Parser)]
#[command(name = "mmce", version, about = "Monotone multi-stage causal estimation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its ground truth into the `--out` directory.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model on a dataset CSV and write the model file.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Write per-rider response curves on the model grid.
    Curves {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Score a model on a holdout and write the report.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Ground-truth CSV from `gen`; adds curve error to the report.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Write the report even if the holdout fails the eligibility check.
        #[arg(long)]
        force: bool,
    },
    /// Assign one treatment level per rider under a budget.
    Allocate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Overrides the `budget` key.
        #[arg(long, allow_negative_numbers = true)]
        budget: Option<f64>,
        /// Exhaustive search instead of greedy (small instances only).
        #[arg(long)]
        exact: bool,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn run(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Gen { common } => commands::gen(&load_config(&common)?, &common.out, stdout),
        Command::Train { common, data } => commands::train(&load_config(&common)?, &data, &common.out, stdout),
        Command::Curves { common, model, data } => {
            load_config(&common)?;
            commands::curves(&model, &data, &common.out, stdout)
        }
        Command::Eval {
            common,
            model,
            data,
            truth,
            force,
        } => commands::eval(
            &load_config(&common)?,
            &model,
            &data,
            truth.as_deref(),
            force,
            &common.out,
            stdout,
        ),
        Command::Allocate {
            common,
            model,
            data,
            truth,
            budget,
            exact,
        } => {
            let args = AllocateArgs {
                model: &model,
                data: &data,
                truth: truth.as_deref(),
                budget,
                exact,
                out: &common.out,
            };
            commands::allocate(&load_config(&common)?, &args, stdout)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(cli, &mut lock) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = lock.flush();
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
