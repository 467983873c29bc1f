use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use cutoff_lab_cli::{run_with_workers, CliError, EnvOverrides, ExperimentConfig, Subcommand};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    /// Spectral data of the flow and the profile verdict.
    Spectral,
    /// Raw trajectories on the cutoff window.
    Simulate,
    /// Uncoupled distance estimates by every applicable method.
    Wasserstein,
    /// Builtin verification suites.
    Properties,
    /// Decay of the distance to equilibrium against the ergodic bound.
    Ergodic,
    /// The cutoff curve, profile fit and collapse checks.
    Cutoff,
    /// Moments on the window and coupled deviation moments.
    Moments,
    /// First-order approximation errors at the cutoff time.
    FwError,
}

impl From<Command> for Subcommand {
    fn from(c: Command) -> Self {
        match c {
            Command::Spectral => Subcommand::Spectral,
            Command::Simulate => Subcommand::Simulate,
            Command::Wasserstein => Subcommand::Wasserstein,
            Command::Properties => Subcommand::Properties,
            Command::Ergodic => Subcommand::Ergodic,
            Command::Cutoff => Subcommand::Cutoff,
            Command::Moments => Subcommand::Moments,
            Command::FwError => Subcommand::FwError,
        }
    }
}

/// Cutoff experiments for small-noise Levy-driven dissipative SDEs.
///
/// The output directory can be overridden with CUTOFF_OUTPUT_DIR and the
/// worker count set with CUTOFF_WORKERS.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Experiment config (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Validate the config and print it with defaults filled in, without running.
    #[arg(long)]
    check: bool,
}

fn main_inner(cli: Cli) -> Result<(), CliError> {
    let env = EnvOverrides::from_env()?;
    let mut config = ExperimentConfig::from_path(&cli.config)?;
    env.apply(&mut config);
    if cli.check {
        let exp = config.resolve()?;
        print!("{}", exp.config.to_toml_string()?);
        return Ok(());
    }
    let outcome = run_with_workers(&config, cli.command.into(), env.workers)?;
    for path in &outcome.written {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
