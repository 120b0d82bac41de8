//! `dyninv`: generate test problems, run the solvers and the dense oracles.

mod commands;
mod config;
mod setup;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{split_overrides, RunConfig};

#[derive(Parser, Debug)]
#[command(
    name = "dyninv",
    version,
    about = "Hybrid Krylov solvers for dynamic linear inverse problems",
    after_help = "Any configuration key can be overridden as --section.key=value (e.g. --solver.lambda=0.5)."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration file.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Log progress to standard error.
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate a test problem and save it.
    Generate,
    /// Compute a reconstruction.
    Solve,
    /// Estimate posterior variances.
    Variance,
    /// Dense reference solutions for small problems.
    Oracle,
    /// Tabulate a covariance kernel.
    KernelEval,
}

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Core(dyninv::Error),
    Io(std::io::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl From<dyninv::Error> for CliError {
    fn from(e: dyninv::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use dyninv::Error as E;
        match self {
            CliError::Validation(_) => 2,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(E::Generation(_)) => 3,
            CliError::Core(E::Io(_) | E::Csv(_)) | CliError::Io(_) => 1,
            CliError::Core(_) => 2,
        }
    }
}

fn main() -> ExitCode {
    let (args, overrides) = split_overrides(std::env::args());
    let cli = Cli::parse_from(args);
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .parse_env("DYNINV_LOG")
        .init();

    let run = || -> Result<(), CliError> {
        let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
        match cli.command {
            Command::Generate => commands::generate(&cfg),
            Command::Solve => commands::solve(&cfg),
            Command::Variance => commands::variance(&cfg),
            Command::Oracle => commands::oracle(&cfg),
            Command::KernelEval => commands::kernel_eval(&cfg),
        }
    };
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
