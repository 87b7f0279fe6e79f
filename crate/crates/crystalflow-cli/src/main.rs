//! `crystalflow` — batch front door for harmonic-crystal simulations.
//!
//! Subcommands: `dispersion`, `limits`, `sample`, `evolve`, `current`,
//! `simulate`, `halfspace`, `compare`. Every run is driven by one TOML
//! config (see `docs/config.md`); outputs are JSON reports with the config
//! echoed in, plus CSV tables. Set `CRYSTALFLOW_LOG` for log verbosity.
//!
//! Exit codes: 0 ok, 2 config error, 3 validation (E3/E6) failure,
//! 4 comparison failure, 1 anything else.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "crystalflow", version, about = "harmonic crystal dynamics, limits, and Monte Carlo verification")]
struct Cli {
    /// Path to the run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides [output].dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (overrides [ensemble].workers; 0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Master seed (overrides [ensemble].seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Allow observation times beyond the finite-size horizon.
    #[arg(long, global = true)]
    override_horizon: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Band tables and condition diagnostics on the quadrature grid.
    Dispersion,
    /// Analytic limit report: J_inf, c_l, K_inf, q_inf window (and the
    /// half-space profile when the layout is half-space).
    Limits,
    /// Draw one spliced initial datum and write it as a snapshot.
    Sample {
        /// Snapshot path (default <out>/sample.crfs).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Ensemble member index whose seed stream to use.
        #[arg(long, default_value_t = 0)]
        index: u64,
    },
    /// Evolve a snapshot by the exact propagator.
    Evolve {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        time: f64,
        /// Snapshot path (default <out>/evolved.crfs).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Plane currents of a snapshot, one row per cut.
    Current {
        #[arg(long)]
        input: PathBuf,
        /// 1-based axis (default 1).
        #[arg(long, default_value_t = 1)]
        axis: usize,
        /// Time label copied into the CSV.
        #[arg(long, default_value_t = 0.0)]
        time: f64,
    },
    /// Monte Carlo ensemble on the periodic lattice, with analytic
    /// comparison when [compare].enabled.
    Simulate,
    /// Monte Carlo ensemble on the half-space slab with the analytic
    /// current profile.
    Halfspace,
    /// Re-run the verdict for existing artifacts.
    Compare {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        limits: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("CRYSTALFLOW_LOG", "warn"),
    )
    .init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {:#}", err.source);
            ExitCode::from(err.code)
        }
    }
}

pub(crate) struct CliError {
    pub code: u8,
    pub source: anyhow::Error,
}

impl CliError {
    pub fn config(source: anyhow::Error) -> Self {
        Self { code: 2, source }
    }
    pub fn validation(source: anyhow::Error) -> Self {
        Self { code: 3, source }
    }
    pub fn comparison(source: anyhow::Error) -> Self {
        Self { code: 4, source }
    }
    pub fn other(source: anyhow::Error) -> Self {
        Self { code: 1, source }
    }
}

/// Classify library errors: spectral positivity/singularity problems are
/// validation failures (exit 3), the rest generic.
pub(crate) fn classify(err: crystalflow::Error) -> CliError {
    use crystalflow::Error as E;
    match err {
        E::NotPositive { .. } | E::SingularSymbol { .. } | E::DensityNotPositive { .. } => {
            CliError::validation(err.into())
        }
        E::InvalidConfig(_) | E::InvalidInteraction(_) | E::SymmetryViolation { .. } => {
            CliError::config(err.into())
        }
        other => CliError::other(other.into()),
    }
}
