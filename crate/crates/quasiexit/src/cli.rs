//! Argument parsing and exit-code mapping.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::{self, Command};
use crate::config::parse_config;
use crate::error::{CliError, EXIT_OK, EXIT_VALIDATION};
use crate::exec::RayonExecutor;

#[derive(Debug, Parser)]
#[command(name = "quasiexit", version, about = "Exit times, exit locations and quasipotentials of small-noise diffusions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// JSON experiment configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for CSV and JSON artifacts.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads; results do not depend on this.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Overrides `master_seed` from the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Probe the structural assumptions on the domain and field.
    CheckAssumptions(Common),
    /// Minimum geometric action to boundary points and to `action.targets`.
    Quasipotential(Common),
    /// Exit-time and exit-location statistics, one run per ε.
    ExitStats(Common),
    /// Coupled perturbed and unperturbed trajectories on a finite horizon.
    Couple(Common),
    /// Alternating ball/sphere stopping times and the per-cycle exit probability.
    Cycles(Common),
    /// Interacting-particle law monitor and the ψ comparison.
    Mv(Common),
    /// Exit statistics over an ε grid and the fit of `(ε/2) ln E[τ]`.
    Kramers(Common),
}

impl Sub {
    fn split(&self) -> (Command, &Common) {
        match self {
            Sub::CheckAssumptions(c) => (Command::CheckAssumptions, c),
            Sub::Quasipotential(c) => (Command::Quasipotential, c),
            Sub::ExitStats(c) => (Command::ExitStats, c),
            Sub::Couple(c) => (Command::Couple, c),
            Sub::Cycles(c) => (Command::Cycles, c),
            Sub::Mv(c) => (Command::Mv, c),
            Sub::Kramers(c) => (Command::Kramers, c),
        }
    }
}

fn execute(cmd: Command, common: &Common) -> Result<commands::Outcome, CliError> {
    let text = std::fs::read_to_string(&common.config).map_err(|e| CliError::io(&common.config, e))?;
    let mut cfg = parse_config(&text)?;
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    if common.workers == 0 {
        return Err(CliError::Validation("--workers must be >= 1".into()));
    }
    let exec = RayonExecutor::new(common.workers);
    commands::run(cmd, &cfg, &common.out, &exec)
}

/// Runs the CLI on `args` (including the program name) and returns the process exit code.
pub fn run_cli<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(stderr, "{e}");
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    let (cmd, common) = cli.command.split();
    match execute(cmd, common) {
        Ok(outcome) => {
            for line in &outcome.lines {
                let _ = writeln!(stdout, "{line}");
            }
            if outcome.passed {
                EXIT_OK
            } else {
                let _ = writeln!(stderr, "{}: check failed", cmd.name());
                EXIT_VALIDATION
            }
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
