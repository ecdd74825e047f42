//! Command-line front end: loads an experiment config, runs the solve,
//! simulation, threshold-figure and mixing pipelines, and writes CSV tables
//! plus a JSON manifest.

pub mod commands;
pub mod config;
pub mod csv;
pub mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{cmd_figure1, cmd_mixing, cmd_simulate, cmd_solve, RunContext};
pub use config::ExperimentConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "switchqcd", version, about = "Change-detection based controller switching for MDPs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mode policies, stationary distributions, lambda, value tables, thresholds.
    Solve(CommonArgs),
    /// Coupled Monte Carlo comparison against the mode-observing controller.
    Simulate(CommonArgs),
    /// Thresholds and false-alarm probability across the change-rate sweep.
    Figure1(CommonArgs),
    /// Mixing profiles and cost-to-go bound checks of the induced chains.
    Mixing(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON experiment config.
    #[arg(long)]
    pub config: PathBuf,
    /// Master seed, overriding the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Simulation worker threads (0: all cores).
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

pub fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    let (args, cmd): (&CommonArgs, fn(&RunContext) -> Result<Vec<PathBuf>, CliError>) = match &cli.command {
        Command::Solve(a) => (a, cmd_solve),
        Command::Simulate(a) => (a, cmd_simulate),
        Command::Figure1(a) => (a, cmd_figure1),
        Command::Mixing(a) => (a, cmd_mixing),
    };
    let config = ExperimentConfig::load(&args.config)?;
    let ctx = RunContext::new(config, args.seed, args.out.clone(), args.workers)?;
    cmd(&ctx)
}
