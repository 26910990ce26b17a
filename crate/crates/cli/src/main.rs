//! `teleus`: run, replay and analyze teleoperation sessions, and bridge a
//! live console over WebSocket.
//!
//! Results go to stdout as `key=value` lines; diagnostics go to stderr.

mod analyze;
mod config;
mod run;
mod serve;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("port {0} is in use")]
    PortInUse(u16),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Input(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::PortInUse(_) => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "teleus",
    version,
    about = "Tele-ultrasound teleoperation engine"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a full session (calibration, then a scripted scan) and write
    /// its trajectory log.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config seed; derived seeds follow it.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = ["ideal", "wifi", "5g"])]
        preset: Option<String>,
        /// Trajectory log path (default `session_<seed>.log`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-render leader forces from a logged trajectory.
    Replay {
        log: PathBuf,
        /// Contact gains and landmarks; the log's own ellipsoid is used when
        /// present.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tracking metrics per log, aggregates, and quality statistics.
    Analyze {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Live-leader session for one console client over WebSocket.
    Serve {
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Log written each time the session stops.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TELEOP_LOG_LEVEL", "warn"))
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            seed,
            preset,
            out,
        } => run::cmd_run(config.as_deref(), seed, preset, out),
        Command::Replay { log, config, out } => run::cmd_replay(&log, config.as_deref(), out),
        Command::Analyze { logs, scores, out } => {
            analyze::cmd_analyze(&logs, scores.as_deref(), out.as_deref())
        }
        Command::Serve { port, config, out } => serve::cmd_serve(port, config.as_deref(), out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
