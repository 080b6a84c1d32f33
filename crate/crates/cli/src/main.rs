//! `cdiff`: prepare pair datasets, train the conditional denoiser, sample
//! reconstructions and run the evaluation sweeps.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{0}")]
    Run(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Run(_) => 1,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "cdiff", version, about = "Conditional diffusion denoising for an impaired wireless link")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load or draw images and build the training pair dataset.
    Prepare {
        #[command(flatten)]
        common: Common,
    },
    /// Train the denoiser on the prepared pairs.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Reconstruct one 32x32 PGM image.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Treat the input as clean, send it over the link at this SNR and
        /// write an (original, received, reconstructed) triptych.
        #[arg(long, allow_hyphen_values = true)]
        snr: Option<f64>,
    },
    /// PSNR/MSE over the configured SNR grid.
    SweepSnr {
        #[command(flatten)]
        common: Common,
    },
    /// MSE statistics over the receiver impairment grid.
    SweepImpair {
        #[command(flatten)]
        common: Common,
    },
    /// Print the schedule, the FLOP estimate and checkpoint metadata.
    Inspect {
        #[command(flatten)]
        common: Common,
        /// Also print the full schedule table as CSV.
        #[arg(long)]
        table: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let load = |c: &Common| config::RunConfig::load(c.config.as_deref(), c.seed);
    match cli.command {
        Command::Prepare { common } => commands::prepare(&load(&common)?),
        Command::Train { common } => commands::train(&load(&common)?),
        Command::Sample {
            common,
            input,
            output,
            snr,
        } => commands::sample(&load(&common)?, &input, &output, snr),
        Command::SweepSnr { common } => commands::sweep_snr(&load(&common)?),
        Command::SweepImpair { common } => commands::sweep_impair(&load(&common)?),
        Command::Inspect { common, table } => commands::inspect(&load(&common)?, table),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cdiff: {e}");
            ExitCode::from(e.code())
        }
    }
}
