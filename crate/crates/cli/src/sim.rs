use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, ValueEnum};

use nmo_core::profiler::{
    encode_perf_attr, parse_config, PhaseTag, ProfileConfig, RegionTag, SamplingMode,
};
use nmo_core::sim::{gen_workload, run_sampling, MemoryModel, SamplerConfig, WorkloadSpec};
use nmo_core::transport::{convert_timestamp, TimescaleParams, DEFAULT_PAGE_SIZE};

use crate::files::{json_bytes, read_json, write_out, Manifest, MEM_ACCESS_COUNTER};
use crate::{CliError, CommonOpts};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelChoice {
    /// Level mix with a 300-cycle mean latency.
    Reference,
    /// Same level mix, zero latency: no collisions.
    Ideal,
}

impl ModelChoice {
    pub fn model(self) -> MemoryModel {
        match self {
            ModelChoice::Reference => MemoryModel::reference(),
            ModelChoice::Ideal => MemoryModel::ideal(),
        }
    }
}

fn parse_switch(s: &str) -> Result<bool, String> {
    match s.to_ascii_lowercase().as_str() {
        "1" | "on" | "true" | "yes" => Ok(true),
        "0" | "off" | "false" | "no" => Ok(false),
        _ => Err(format!("expected on/off, got {s:?}")),
    }
}

fn parse_mib(s: &str) -> Result<u64, String> {
    match s.parse::<u64>() {
        Ok(0) => Err("buffer size must be at least 1 MiB".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// Workload description (JSON).
    #[arg(long)]
    pub workload: PathBuf,
    /// Base name of the output files [env: NMO_NAME].
    #[arg(long)]
    pub name: Option<String>,
    /// Operation kinds to sample: none, load, store, loadstore [env: NMO_MODE].
    #[arg(long, value_parser = str::parse::<SamplingMode>)]
    pub mode: Option<SamplingMode>,
    /// Sampling period in operations [env: NMO_PERIOD].
    #[arg(long)]
    pub period: Option<u64>,
    /// on/off [env: NMO_ENABLE].
    #[arg(long, value_parser = parse_switch)]
    pub enable: Option<bool>,
    /// on/off [env: NMO_TRACK_RSS].
    #[arg(long, value_parser = parse_switch)]
    pub track_rss: Option<bool>,
    /// Ring buffer size in MiB [env: NMO_BUFSIZE].
    #[arg(long, value_parser = parse_mib)]
    pub bufsize: Option<u64>,
    /// Aux buffer size in MiB [env: NMO_AUXBUFSIZE].
    #[arg(long, value_parser = parse_mib)]
    pub auxbufsize: Option<u64>,
    #[arg(long, value_enum, default_value_t = ModelChoice::Reference)]
    pub model: ModelChoice,
    #[arg(long, default_value_t = DEFAULT_PAGE_SIZE)]
    pub page_size: u64,
    /// Operations between a watermark interrupt and the drain.
    #[arg(long, default_value_t = 0)]
    pub drain_latency: u64,
    /// Width of the ground-truth counter bins, in operations.
    #[arg(long, default_value_t = 1_000_000)]
    pub counter_interval: u64,
    #[arg(long, default_value_t = 0)]
    pub time_zero: u64,
    #[arg(long, default_value_t = 0)]
    pub time_shift: u8,
    #[arg(long, default_value_t = 1)]
    pub time_mult: u32,
    #[command(flatten)]
    pub common: CommonOpts,
}

/// Built-in defaults, then `NMO_*` variables, then flags.
pub fn resolve_config(
    args: &SimArgs,
    env: &HashMap<String, String>,
) -> Result<ProfileConfig, CliError> {
    let mut cfg = parse_config(env.iter())?;
    if let Some(name) = &args.name {
        if name.is_empty() || name.contains(['/', '\\']) {
            return Err(CliError::config(format!(
                "--name: invalid base name {name:?}"
            )));
        }
        cfg.name = name.clone();
    }
    cfg.mode = args.mode.unwrap_or(cfg.mode);
    cfg.period = args.period.unwrap_or(cfg.period);
    cfg.enable = args.enable.unwrap_or(cfg.enable);
    cfg.track_rss = args.track_rss.unwrap_or(cfg.track_rss);
    cfg.ring_bufsize_mib = args.bufsize.unwrap_or(cfg.ring_bufsize_mib);
    cfg.aux_bufsize_mib = args.auxbufsize.unwrap_or(cfg.aux_bufsize_mib);
    Ok(cfg)
}

pub fn run(
    args: &SimArgs,
    env: &HashMap<String, String>,
    stderr: &mut dyn Write,
) -> Result<(), CliError> {
    let cfg = resolve_config(args, env)?;
    let workload: WorkloadSpec = read_json(&args.workload)?;
    let stream = gen_workload(&workload)?;
    let timescale = TimescaleParams {
        time_zero: args.time_zero,
        time_shift: args.time_shift,
        time_mult: args.time_mult,
    };
    let sampling_enabled = cfg.sampling_enabled();
    let sampler = SamplerConfig {
        period: if sampling_enabled { cfg.period } else { 0 },
        filter: cfg.mode.filter(),
        buffers: cfg.buffer_config(args.page_size),
        drain_latency_ops: args.drain_latency,
        counter_interval_ops: args.counter_interval,
        track_rss: cfg.track_rss,
        timescale,
        ..SamplerConfig::default()
    };
    let model = args.model.model();
    let run = run_sampling(&stream, &sampler, &model, args.common.seed)?;

    let trace_file = format!("{}.trace", cfg.name);
    write_out(
        &args.common.out_dir,
        &trace_file,
        &run.trace_file().to_bytes(),
    )?;

    let last_ts = (0..stream.threads())
        .map(|c| stream.ops_for_core(c))
        .max()
        .unwrap_or(0);
    let manifest = Manifest {
        name: cfg.name.clone(),
        trace_file,
        attr: if sampling_enabled {
            encode_perf_attr(&cfg).ok()
        } else {
            None
        },
        sampling_enabled,
        config: cfg.clone(),
        seed: args.common.seed,
        tags: workload
            .region_layout
            .iter()
            .map(|r| RegionTag::new(r.name.clone(), r.base_address, r.end()))
            .collect(),
        phases: vec![PhaseTag {
            name: workload.kind.phase_name().to_owned(),
            t_start: convert_timestamp(1, &timescale),
            t_end: Some(convert_timestamp(last_ts + 1, &timescale)),
        }],
        workload,
        model,
        sampler,
        timescale,
        counter_interval_ns: run.counter_interval_ns(),
        counters: BTreeMap::from([(MEM_ACCESS_COUNTER.to_owned(), run.mem_access_series())]),
        rss_series: run.rss_series(),
        outcome: run.outcome.clone(),
    };
    let manifest_name = format!("{}.manifest.json", cfg.name);
    write_out(&args.common.out_dir, &manifest_name, &json_bytes(&manifest))?;

    let t = &run.outcome.total;
    let _ = writeln!(
        stderr,
        "{}: {} ops, {} selected, {} delivered, {} collided, {} truncated, {} interrupts",
        cfg.name,
        t.ground_truth_ops,
        t.selected,
        t.delivered,
        t.collided,
        t.truncated_dropped,
        t.interrupts
    );
    Ok(())
}
