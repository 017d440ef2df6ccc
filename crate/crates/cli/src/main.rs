mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Reproducible experiments for biased-assimilation opinion dynamics.
#[derive(Debug, Parser)]
#[command(name = "biasdyn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Master seed; overrides `[run] seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory; overrides `[output] dir`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the dynamics and write the trajectory.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Check a polarized run against its exponential envelope.
    VerifyBounds {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        horizon: Option<usize>,
        /// Check this trajectory CSV instead of simulating.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Closed-form equilibrium families, optionally cross-checked by search.
    Equilibria {
        #[command(flatten)]
        common: Common,
        /// Run the grid-seeded Newton search.
        #[arg(long)]
        search: bool,
    },
    /// Randomized stability test of every vertex equilibrium.
    StabilityScan {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        horizon: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long)]
        blowup: Option<f64>,
    },
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or inputs.
    Usage(String),
    /// The run completed but a check failed.
    Failed(String),
}

impl From<biasdyn::Error> for CliError {
    fn from(e: biasdyn::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { common, horizon } => commands::simulate(&common, horizon),
        Command::VerifyBounds {
            common,
            horizon,
            trajectory,
        } => commands::verify_bounds(&common, horizon, trajectory.as_deref()),
        Command::Equilibria { common, search } => commands::equilibria(&common, search),
        Command::StabilityScan {
            common,
            horizon,
            trials,
            radius,
            blowup,
        } => commands::stability_scan(&common, horizon, trials, radius, blowup),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Failed(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
