//! `hlm`: recode survey data, fit two-level models, diagnose clustering,
//! simulate data and pool plausible values.

mod commands;
mod error;
mod report;
mod tutorial;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "hlm", version, about = "Two-level hierarchical linear models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Apply a codebook to raw survey data and write the recoded CSV.
    Recode(RecodeArgs),
    /// Fit a model spec to a CSV dataset.
    Fit(FitArgs),
    /// Descriptives, correlations and the clustering block.
    Diagnose(DiagnoseArgs),
    /// Generate a synthetic dataset from a preset or config file.
    Simulate(SimulateArgs),
    /// Fit once per plausible value and pool with Rubin's rules.
    Pool(PoolArgs),
    /// Replay the Model 0 to Model 5 sequence on simulated data.
    Tutorial(TutorialArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Text,
    Structured,
}

#[derive(Args)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct RecodeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub codebook: PathBuf,
    /// Recoded CSV destination.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "school")]
    pub cluster: String,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Unconditional model used for the ICC block and variance explained.
    #[arg(long)]
    pub null_model: Option<PathBuf>,
    /// Overrides the model file's `cluster` clause (default "school").
    #[arg(long)]
    pub cluster: Option<String>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated variables; defaults to every numeric column.
    #[arg(long)]
    pub vars: Option<String>,
    #[arg(long)]
    pub cluster: Option<String>,
    /// Fit whose variance components feed the clustering block.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub null_model: Option<PathBuf>,
    #[arg(long)]
    pub tau00: Option<f64>,
    #[arg(long)]
    pub sigma2: Option<f64>,
    /// Mean cluster size.
    #[arg(long)]
    pub nbar: Option<f64>,
    /// Total number of level-1 units.
    #[arg(long)]
    pub n_total: Option<f64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["preset", "config"])))]
pub struct SimulateArgs {
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed of the preset or config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct PoolArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Comma-separated plausible-value columns.
    #[arg(long)]
    pub pv: String,
    /// Fit once on the row mean of the plausible values (non-canonical).
    #[arg(long)]
    pub average_pv: bool,
    #[arg(long)]
    pub cluster: Option<String>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args)]
pub struct TutorialArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(error::EXIT_INPUT)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hlm: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
