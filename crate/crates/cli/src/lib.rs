//! Command-line driver for the SPOT pipeline: dataset generation, behavior
//! model training, offline policy training, online fine-tuning, evaluation
//! and the analysis sweeps. Every command writes a self-describing output
//! directory (see [`output`]) and fails with a distinct exit code per error
//! family (see [`CliError::exit_code`]).

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;
pub use error::CliError;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_VAR: &str = "SPOT_OUTPUT_ROOT";

#[derive(Debug, Parser)]
#[command(name = "spot", version, about = "Density-regularized offline RL pipeline")]
pub struct Cli {
    /// TOML run configuration; every field is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Seed; defaults to the first entry of `seeds` in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; defaults to `<root>/<command>-seed<seed>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an offline dataset.
    GenData {
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        regime: Option<String>,
        #[arg(long)]
        size: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Fit the CVAE behavior model to a dataset.
    TrainVae {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train a SPOT agent offline.
    TrainSpot {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vae: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        lambda: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Fine-tune a trained agent online.
    Finetune {
        #[arg(long)]
        agent: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a trained agent without exploration noise.
    Eval {
        #[arg(long)]
        agent: PathBuf,
        #[arg(long)]
        env: Option<String>,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Analysis sweeps producing CSV tables.
    #[command(subcommand)]
    Analyze(Analyze),
}

#[derive(Debug, Subcommand)]
pub enum Analyze {
    /// Optimality gap of the supported operator against its bound on random tabular MDPs.
    TabularBound {
        #[arg(long)]
        mdps: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Percentiles of the estimated behavior log-density at the agent's actions.
    DensityProfile {
        #[arg(long)]
        agent: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train over the λ grid and every configured seed.
    LambdaSweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vae: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train with different numbers of latent draws in the density estimate.
    LEffect {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vae: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        lambda: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
}

/// Parses `args` (program name first) and runs the command.
pub fn run_from<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
            CliError::Usage(e.to_string())
        }
        _ => CliError::Usage(e.to_string().lines().next().unwrap_or_default().to_string()),
    })?;
    commands::run(cli)
}

/// Runs the process and returns its exit code, reporting failures on stderr.
pub fn main_with_args(args: Vec<OsString>) -> i32 {
    match Cli::try_parse_from(&args) {
        Err(e) if matches!(
            e.kind(),
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
        ) =>
        {
            print!("{e}");
            0
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or_default().to_string();
            eprintln!("{}", CliError::Usage(first).report());
            2
        }
        Ok(cli) => match commands::run(cli) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("{}", e.report());
                e.exit_code()
            }
        },
    }
}
