//! Command-line front end: `simulate`, `synth`, `pipeline`, `train`,
//! `evaluate` and `dca`, driven by a TOML configuration.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for runtime or
//! training failures.

mod commands;
pub mod config;
pub mod evaluate;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use commands::{cmd_dca, cmd_evaluate, cmd_pipeline, cmd_simulate, cmd_synth, cmd_train};
pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "fairnb", version, about = "Censoring-aware fairness and net-benefit evaluation of risk models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for fold training and bootstrap replicates.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Analytic simulation of subgroup miscalibration.
    Simulate,
    /// Generate a synthetic cohort.
    Synth,
    /// Partition, weight, train, select, evaluate and draw decision curves.
    Pipeline,
    /// Train one configuration on every fold.
    Train,
    /// Bootstrap metric report for saved models.
    Evaluate,
    /// Decision curves for saved models.
    Dca,
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already initialised: {e}");
        }
    }
    let cfg = RunConfig::load(cli.config.as_deref())?.with_overrides(cli.seed, cli.out);
    match cli.command {
        Command::Simulate => cmd_simulate(&cfg),
        Command::Synth => cmd_synth(&cfg),
        Command::Pipeline => cmd_pipeline(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Evaluate => cmd_evaluate(&cfg),
        Command::Dca => cmd_dca(&cfg),
    }
}

/// Parses `args` and runs; usage errors exit with code 2.
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            code
        }
    }
}
