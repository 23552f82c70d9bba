//! `nmo` command-line driver: simulate, decode, analyze, sweep and report.

mod analyze;
mod decode;
mod files;
mod report;
mod sim;
mod sweep;

use std::collections::HashMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use nmo_core::analysis::AnalysisError;
use nmo_core::profiler::ProfileError;
use nmo_core::sim::SimError;
use nmo_core::transport::TraceFileError;

pub use files::Manifest;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INTEGRITY: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Integrity(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => EXIT_IO,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Integrity(_) => EXIT_INTEGRITY,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }
}

impl From<ProfileError> for CliError {
    fn from(e: ProfileError) -> Self {
        match e {
            ProfileError::TraceFile(TraceFileError::Io(source)) | ProfileError::Io(source) => {
                CliError::Io {
                    path: PathBuf::new(),
                    source,
                }
            }
            e @ (ProfileError::TraceFile(_) | ProfileError::Codec { .. }) => {
                CliError::Integrity(e.to_string())
            }
            e => CliError::Config(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "nmo", version, about = "Memory sampling profiler toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct CommonOpts {
    /// Seed for the sampling unit's random jitter and level draws.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of seeds per sweep point, counting up from --seed.
    #[arg(long, default_value_t = 5)]
    pub trials: u64,
    /// Directory for output files.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a workload through the simulated sampling pipeline.
    Sim(sim::SimArgs),
    /// Print the samples of a raw trace as JSON lines.
    Decode(decode::DecodeArgs),
    /// Produce capacity, bandwidth, region and scatter outputs.
    Analyze(analyze::AnalyzeArgs),
    /// Vary one knob over values and seeds.
    Sweep(sweep::SweepArgs),
    /// Summarize sweep and timeline CSV files as JSON.
    Report(report::ReportArgs),
}

/// Entry point with explicit environment and output streams.
pub fn run<I, T>(
    args: I,
    env: &HashMap<String, String>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 {
                stdout.write_all(text.as_bytes())
            } else {
                stderr.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Sim(a) => sim::run(&a, env, stderr),
        Command::Decode(a) => decode::run(&a, stdout, stderr),
        Command::Analyze(a) => analyze::run(&a),
        Command::Sweep(a) => sweep::run(&a),
        Command::Report(a) => report::run(&a, stdout),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "nmo: {e}");
            e.exit_code()
        }
    }
}
