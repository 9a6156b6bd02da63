//! Command-line front end.
//!
//! Every subcommand reads one TOML config, writes CSV tables (and SVG plots
//! for the sweeps) to the output directory, and maps failures to exit codes:
//! 0 success, 1 usage, 2 config or input, 3 solver or output failure.

mod commands;
pub mod config;
pub mod expr;
pub mod output;
pub mod plot;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::error;

pub use commands::{convergence_study, ConvergenceRow};
pub use config::{parse_config, parse_config_str, ExperimentConfig};

use crate::error::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "ocstab", version, about = "Optimal control of semilinear elliptic equations and stability experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides OUTPUT_DIR and the config.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Overrides `rng_seed` of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Only log errors and print no summary.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Clone, Copy, Debug, Subcommand)]
enum Command {
    /// Solve the state equation for `state.u`: state.csv, report.csv.
    SolveState,
    /// Solve the control problem: control.csv, report.csv, history.csv.
    SolveControl,
    /// Finite-difference checks of the gradient and Hessian:
    /// gradient_check.csv, hessian_check.csv.
    VerifyDerivatives,
    /// Probe the structural assumptions at the computed optimum:
    /// assumptions.csv, measure.csv.
    CheckAssumptions,
    /// Re-solve perturbed problems and fit Lipschitz slopes: sweep.csv,
    /// slopes.csv, sweep.svg.
    SweepStability,
    /// Mesh convergence against a manufactured state: convergence.csv,
    /// convergence.svg.
    ConvergenceStudy,
}

/// What a subcommand produced.
#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: Vec<String>,
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = if cli.common.quiet { "error" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();

    let Some(config_path) = cli.common.config.as_deref() else {
        eprintln!("error: --config <path> is required\n\nUsage: ocstab <COMMAND> --config <path>");
        return EXIT_USAGE;
    };
    match run(cli.command, config_path, &cli.common) {
        Ok(outcome) => {
            if !cli.common.quiet {
                for line in &outcome.summary {
                    println!("{line}");
                }
                for f in &outcome.files {
                    println!("wrote {}", f.display());
                }
            }
            EXIT_OK
        }
        Err(e) => {
            error!("{e}");
            if cli.common.quiet {
                eprintln!("error: {e}");
            }
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. }
        | Error::InvalidInput(_)
        | Error::Assumption(_)
        | Error::NonFinite { .. }
        | Error::MeshMismatch { .. } => EXIT_CONFIG,
        _ => EXIT_SOLVER,
    }
}

fn run(command: Command, config_path: &Path, common: &CommonArgs) -> Result<Outcome> {
    let mut cfg = parse_config(config_path)?;
    if let Some(seed) = common.seed {
        cfg.rng_seed = seed;
    }
    let out = common
        .output
        .clone()
        .or_else(|| std::env::var_os("OUTPUT_DIR").map(PathBuf::from))
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("output"));
    std::fs::create_dir_all(&out)?;
    match command {
        Command::SolveState => commands::solve_state(&cfg, &out),
        Command::SolveControl => commands::solve_control(&cfg, &out),
        Command::VerifyDerivatives => commands::verify_derivatives(&cfg, &out),
        Command::CheckAssumptions => commands::check_assumptions(&cfg, &out),
        Command::SweepStability => commands::sweep_stability(&cfg, &out),
        Command::ConvergenceStudy => commands::convergence(&cfg, &out),
    }
}
