use std::path::PathBuf;

use clap::{Args, ValueEnum};

use nmo_core::analysis::{presets, run_sweep, Knob, SensitivityRow, SweepBase};
use nmo_core::sim::WorkloadSpec;

use crate::files::{csv_bytes, read_json, write_out};
use crate::{CliError, CommonOpts};

pub const SWEEP_HEADER: [&str; 7] = [
    "knob",
    "value",
    "seed",
    "accuracy",
    "overhead",
    "collisions",
    "delivered",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Triad, zero-latency model.
    Unbiasedness,
    /// Triad, reference latency model.
    Collisions,
    /// Triad, 4 KiB pages, slow consumer, zero-latency model.
    AuxBuffer,
    /// As aux-buffer with the reference latency model.
    Threads,
}

impl Preset {
    fn base(self) -> SweepBase {
        match self {
            Preset::Unbiasedness => presets::unbiasedness(),
            Preset::Collisions => presets::collisions(),
            Preset::AuxBuffer => presets::aux_buffer(),
            Preset::Threads => presets::threads(),
        }
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// period, aux_pages or threads.
    #[arg(long, value_parser = str::parse::<Knob>)]
    pub knob: Knob,
    /// Comma-separated knob values.
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    pub values: Vec<u64>,
    #[arg(long, value_enum, default_value_t = Preset::Collisions)]
    pub preset: Preset,
    /// Full base setup (JSON), replacing the preset.
    #[arg(long, conflicts_with = "preset")]
    pub base: Option<PathBuf>,
    /// Workload description (JSON) replacing the base workload.
    #[arg(long)]
    pub workload: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonOpts,
}

pub fn row_fields(r: &SensitivityRow) -> Vec<String> {
    vec![
        r.knob.to_string(),
        r.value.to_string(),
        r.seed.to_string(),
        r.accuracy.to_string(),
        r.overhead.to_string(),
        r.collisions.to_string(),
        r.delivered.to_string(),
    ]
}

pub fn run(args: &SweepArgs) -> Result<(), CliError> {
    let mut base = match &args.base {
        Some(path) => read_json::<SweepBase>(path)?,
        None => args.preset.base(),
    };
    if let Some(path) = &args.workload {
        base.workload = read_json::<WorkloadSpec>(path)?;
    }
    if args.common.trials == 0 {
        return Err(CliError::config("--trials must be at least 1"));
    }
    let seeds: Vec<u64> = (0..args.common.trials)
        .map(|i| args.common.seed.wrapping_add(i))
        .collect();
    let table = run_sweep(args.knob, &args.values, &base, &seeds)?;
    let csv = csv_bytes(&SWEEP_HEADER, table.rows.iter().map(row_fields));
    write_out(&args.common.out_dir, "sweep.csv", &csv)?;
    Ok(())
}
