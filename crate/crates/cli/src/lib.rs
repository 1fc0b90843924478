//! Batch front-end for barrier certificate synthesis: problem and
//! certificate files, synthesis, verification, simulation and plots.

pub mod commands;
pub mod files;
pub mod plot;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("synthesis infeasible: {0}")]
    Infeasible(String),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Parse(_) | CliError::Io(_) => EXIT_USAGE,
            CliError::Infeasible(_) => EXIT_INFEASIBLE,
            CliError::Verification(_) => EXIT_VERIFY,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "cbc",
    version,
    about = "Control barrier certificate synthesis and verification"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a certificate and controller, then verify them.
    Synth(SynthCmd),
    /// Check a certificate file against a problem.
    Verify(VerifyCmd),
    /// Simulate the closed loop from just inside the barrier boundary.
    Simulate(SimulateCmd),
    /// Grid values and level lines of B or an input component.
    Levelset(LevelsetCmd),
    /// Synthesize in both modes and test set inclusion.
    Compare(CompareCmd),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Cbc,
    Cbf,
}

impl From<ModeArg> for cbc_core::Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Cbc => cbc_core::Mode::Cbc,
            ModeArg::Cbf => cbc_core::Mode::Cbf,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ControllerArg {
    /// The certificate's polynomial controller.
    Polynomial,
    /// A nominal law passed through the QP safety filter.
    QpFilter,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FilterArg {
    Relaxed,
    Switching,
}

fn parse_degree(s: &str) -> Result<(String, u32), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    let v = v
        .trim()
        .parse::<u32>()
        .map_err(|e| format!("degrees.{}: {e}", k.trim()))?;
    Ok((k.trim().to_string(), v))
}

#[derive(Debug, Clone, Args)]
pub struct OutArgs {
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long = "max-iters")]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Degree overrides such as `b=4` (repeatable or comma separated).
    #[arg(long, value_parser = parse_degree, value_delimiter = ',')]
    pub degrees: Vec<(String, u32)>,
}

#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    #[arg(long, default_value_t = 10.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SynthCmd {
    pub problem: PathBuf,
    #[command(flatten)]
    pub out: OutArgs,
    #[command(flatten)]
    pub synth: SynthArgs,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Trajectories simulated during verification.
    #[arg(long, default_value_t = 12)]
    pub trajectories: usize,
    #[command(flatten)]
    pub sim: SimArgs,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyCmd {
    pub problem: PathBuf,
    pub certificate: PathBuf,
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long, value_parser = parse_degree, value_delimiter = ',')]
    pub degrees: Vec<(String, u32)>,
    #[arg(long, default_value_t = 12)]
    pub trajectories: usize,
    #[command(flatten)]
    pub sim: SimArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateCmd {
    pub problem: PathBuf,
    pub certificate: PathBuf,
    #[command(flatten)]
    pub out: OutArgs,
    /// Number of starting points nudged inside the zero level set.
    #[arg(long, default_value_t = 12)]
    pub starts: usize,
    #[arg(long, value_enum, default_value_t = ControllerArg::Polynomial)]
    pub controller: ControllerArg,
    #[arg(long, value_enum, default_value_t = FilterArg::Relaxed)]
    pub filter: FilterArg,
    /// Nominal input components for the QP filter (default zero).
    #[arg(long)]
    pub nominal: Vec<String>,
    #[arg(long, default_value_t = 400)]
    pub grid: usize,
    #[command(flatten)]
    pub sim: SimArgs,
}

#[derive(Debug, Clone, Args)]
pub struct LevelsetCmd {
    pub problem: PathBuf,
    pub certificate: PathBuf,
    /// `B` or an input component `u1`, `u2`, ...
    #[arg(long, default_value = "B")]
    pub which: String,
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long, default_value_t = 400)]
    pub grid: usize,
}

#[derive(Debug, Clone, Args)]
pub struct CompareCmd {
    pub problem: PathBuf,
    #[command(flatten)]
    pub out: OutArgs,
    #[command(flatten)]
    pub synth: SynthArgs,
    /// Degree of the inclusion multiplier.
    #[arg(long = "sigma-degree", default_value_t = 2)]
    pub sigma_degree: u32,
    #[arg(long, default_value_t = 400)]
    pub grid: usize,
}

/// Runs one command and returns its exit code, printing errors to stderr.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Synth(c) => commands::synth(c),
        Command::Verify(c) => commands::verify(c),
        Command::Simulate(c) => commands::simulate(c),
        Command::Levelset(c) => commands::levelset(c),
        Command::Compare(c) => commands::compare(c),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
