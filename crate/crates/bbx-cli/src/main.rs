//! `bbx` — run estimation scenarios, replay detection logs, and analyze
//! observability from the command line.
//!
//! Exit codes: 0 success, 2 usage/config error, 3 runtime error.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "bbx", version, about = "Target motion estimation from 3D bounding boxes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run estimators on a simulated scenario and write traces + metrics.
    Run(RunArgs),
    /// Re-run an estimator over a recorded detection log.
    Replay(ReplayArgs),
    /// Rank-based observability verdicts over sliding windows of a scenario.
    Observability(ObservabilityArgs),
    /// List the built-in scenarios.
    Scenarios,
}

#[derive(Args)]
struct ScenarioSource {
    /// Built-in scenario name (see `bbx scenarios`).
    #[arg(long, conflicts_with = "scenario_file")]
    scenario: Option<String>,
    /// Scenario config file (overrides and/or full definition).
    #[arg(long)]
    scenario_file: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: ScenarioSource,
    /// Comma-separated estimators (default: every estimator applicable to
    /// the scenario).
    #[arg(long, value_delimiter = ',')]
    estimator: Vec<String>,
    /// Output directory for trace CSVs and summary.json.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed override (falls back to BBX_SEED, then the scenario's own seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Time-step override in seconds.
    #[arg(long)]
    dt: Option<f64>,
    /// Duration override in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Pseudo-measurement noise std override.
    #[arg(long)]
    sigma_tbar: Option<f64>,
    /// Thrust-direction noise std override.
    #[arg(long)]
    sigma_h: Option<f64>,
    /// Also write detections.csv and camera_poses.csv for replay.
    #[arg(long)]
    export_detections: bool,
}

#[derive(Args)]
struct ReplayArgs {
    /// Detection log (see README for the schema).
    #[arg(long)]
    detections: PathBuf,
    /// Camera-pose log; its rows define the frame clock.
    #[arg(long)]
    camera_poses: PathBuf,
    /// Estimator to run.
    #[arg(long)]
    estimator: String,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ObservabilityArgs {
    #[command(flatten)]
    source: ScenarioSource,
    /// Polynomial order of the assumed target motion.
    #[arg(long, default_value_t = 2)]
    order: usize,
    /// Observations per sliding window.
    #[arg(long, default_value_t = 8)]
    window: usize,
    /// Keep every n-th frame when sampling the scenario.
    #[arg(long, default_value_t = 5)]
    stride: usize,
    /// Output JSON-lines file.
    #[arg(long, default_value = "verdicts.jsonl")]
    out: PathBuf,
}

/// Errors mapped to process exit codes.
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => commands::run(args),
        Command::Replay(args) => commands::replay(args),
        Command::Observability(args) => commands::observability(args),
        Command::Scenarios => commands::list_scenarios(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
