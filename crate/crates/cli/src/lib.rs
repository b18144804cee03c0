//! Library side of the `snnconv` command: run configuration, the four
//! subcommands and their report formats.

pub mod args;
pub mod commands;
pub mod config;
pub mod report;

use std::path::Path;

pub use args::{Cli, Command, RunArgs};
pub use commands::{default_grid, run_ablate, run_boa, run_convert, run_simulate, Mechanisms};
pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Runtime(#[from] snnconv::Error),
}

impl CliError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 1 for configuration problems found before computing, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            _ => 2,
        }
    }
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Convert(a) => {
            let norm = run_convert(&a.resolve()?)?;
            println!("normalized at p = {}", norm.p);
        }
        Command::Simulate(a) => {
            let r = run_simulate(&a.resolve()?)?;
            println!(
                "{} / {} samples simulated; output KL {}",
                r.succeeded,
                r.samples,
                r.output_kl_mean.map_or("n/a".to_string(), |k| format!("{k:.6}"))
            );
        }
        Command::Ablate(a) => {
            let rows = run_ablate(&a.resolve()?, &default_grid())?;
            println!("{} ablation rows written", rows.len());
        }
        Command::Boa(a) => {
            let o = run_boa(&a.resolve()?)?;
            println!("best p = {} (KL {:.6})", o.best_p, o.best_value);
        }
    }
    Ok(())
}
