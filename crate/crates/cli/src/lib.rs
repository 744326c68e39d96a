//! Experiment orchestration for `kefam-core`: configuration, subcommands,
//! slice cache and reports.

pub mod cache;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::{execute, report, Command, Session};
pub use config::{ExperimentConfig, Overrides, SourceKind};
pub use error::{CliError, Result};
pub use output::{Check, Verdict};

/// Run `command` on a pool of `workers` threads (available parallelism
/// when `None`).
pub fn run(cfg: &ExperimentConfig, command: Command, workers: Option<usize>) -> Result<Verdict> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()?;
    pool.install(|| {
        if command == Command::Report {
            return report(&cfg.output_dir);
        }
        let session = Session::new(cfg.clone())?;
        execute(&session, command)
    })
}
