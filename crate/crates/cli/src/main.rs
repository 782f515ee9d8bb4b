mod config;
mod error;
mod linewidth;
mod ple;
mod protocol;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ConfigFile, Format, Output};
use error::CliError;

#[derive(Parser)]
#[command(name = "nvspec", version, about = "Spectral diffusion analysis and simulation for solid-state emitters")]
struct Cli {
    /// Master seed; falls back to NVSPEC_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON config; its `params` are overridden by flags. Manifests are valid configs.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "nvspec-out")]
    out: PathBuf,
    /// Table format (the manifest is always JSON).
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit PLE scans, extract diffusion rates and cumulative linewidths.
    AnalyzePle(ple::Flags),
    /// Estimate the homogeneous linewidth from low-count scan widths.
    EstimateLinewidth(linewidth::Flags),
    /// Run one of the simulators.
    #[command(subcommand)]
    Simulate(simulate::Kind),
    /// Entanglement-attempt budget versus Purcell factor.
    Protocol(protocol::Flags),
}

/// Seed, config and output shared by every command.
pub struct Ctx {
    pub seed: u64,
    pub config: ConfigFile,
    pub out: Output,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Input("--threads must be at least 1".into()));
        }
        nvspec::par::set_threads(t);
    }
    let config = match &cli.config {
        Some(p) => config::load_config(p)?,
        None => ConfigFile::default(),
    };
    let seed = config::resolve_seed(cli.seed, &config)?;
    let format = cli.format.or(config.format).unwrap_or_default();
    let mut ctx = Ctx {
        seed,
        out: Output::new(&cli.out, format)?,
        config,
    };
    match cli.command {
        Command::AnalyzePle(f) => ple::run(&mut ctx, &f),
        Command::EstimateLinewidth(f) => linewidth::run(&mut ctx, &f),
        Command::Simulate(k) => simulate::run(&mut ctx, &k),
        Command::Protocol(f) => protocol::run(&mut ctx, &f),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
