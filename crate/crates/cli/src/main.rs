//! `dualfv`: run recovery experiments, the self-check suite, and summarize
//! histories.

mod config;
mod run;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },
    #[error("{scheme} solver failed: {source}")]
    Solver {
        scheme: &'static str,
        #[source]
        source: dualfv_core::Error,
    },
    #[error("{failed} check(s) failed")]
    Checks { failed: usize },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    fn exit_code(&self) -> u8 {
        match self {
            Self::Config { .. } | Self::Io { .. } | Self::Input { .. } => 1,
            Self::Solver { .. } => 2,
            Self::Checks { .. } => 3,
        }
    }
}

#[derive(Parser)]
#[command(name = "dualfv", version, about = "Forward-adjoint finite volume recovery experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a key = value config file.
    Run {
        config: PathBuf,
        /// Output directory; overrides `out` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the numerical self-checks.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Summarize one or more history.csv files.
    Table {
        #[arg(required = true)]
        histories: Vec<PathBuf>,
    },
}

fn check(seed: u64) -> Result<(), CliError> {
    let outcomes = dualfv_core::checks::run_suite(seed).map_err(|source| CliError::Solver {
        scheme: "unified",
        source,
    })?;
    let mut failed = 0;
    for o in &outcomes {
        let tag = if o.passed { "PASS" } else { "FAIL" };
        println!("{tag} {}: {:e} <= {:e}", o.name, o.value, o.threshold);
        failed += usize::from(!o.passed);
    }
    if failed > 0 {
        return Err(CliError::Checks { failed });
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out } => run::run(&config, out),
        Command::Check { seed } => check(seed),
        Command::Table { histories } => table::table(&histories),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dualfv: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
