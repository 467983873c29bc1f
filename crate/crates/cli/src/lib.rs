//! Experiment harness for `cutoff-lab`: TOML configs, the subcommands and
//! their on-disk artifacts.
//!
//! Every run resolves its config, computes all outputs in memory and then
//! commits them together with a `manifest.json` (resolved config, its
//! SHA-256, seed, version and per-file digests) through a staging directory.
//! Random streams come from the core crate's counter-based splitting of
//! `(master_seed, purpose, job)`, so outputs do not depend on worker count.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod suites;

pub use commands::{execute, output_dir, run, run_with_workers, Report, RunOutcome, Subcommand};
pub use config::{Experiment, ExperimentConfig};
pub use error::{CliError, FieldError};

/// Overrides the output directory.
pub const ENV_OUTPUT_DIR: &str = "CUTOFF_OUTPUT_DIR";
/// Worker threads for the parallel loops.
pub const ENV_WORKERS: &str = "CUTOFF_WORKERS";

/// Settings taken from the environment.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EnvOverrides {
    pub output_dir: Option<std::path::PathBuf>,
    pub workers: Option<usize>,
}

impl EnvOverrides {
    pub fn from_env() -> Result<Self, CliError> {
        Self::from_values(
            std::env::var_os(ENV_OUTPUT_DIR),
            std::env::var(ENV_WORKERS).ok(),
        )
    }

    pub fn from_values(output_dir: Option<std::ffi::OsString>, workers: Option<String>) -> Result<Self, CliError> {
        let workers = match workers.as_deref().map(str::trim) {
            None | Some("") => None,
            Some(s) => match s.parse::<usize>() {
                Ok(n) if n > 0 => Some(n),
                _ => {
                    return Err(CliError::Env {
                        name: ENV_WORKERS,
                        message: format!("expected a positive integer, got {s:?}"),
                    })
                }
            },
        };
        Ok(Self {
            output_dir: output_dir.filter(|d| !d.is_empty()).map(Into::into),
            workers,
        })
    }

    pub fn apply(&self, config: &mut ExperimentConfig) {
        if let Some(dir) = &self.output_dir {
            config.output_dir = dir.clone();
        }
    }
}
