use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::Args;

use nmo_core::analysis::{
    bandwidth_series, capacity_series, region_profile, DEFAULT_BYTES_PER_EVENT,
};
use nmo_core::profiler::{
    parse_phases, parse_tags, read_rss, validate_rss, write_jsonl, ProfileError,
};

use crate::decode::load_trace;
use crate::files::{
    csv_bytes, hex, json_bytes, read_json, write_out, Manifest, MEM_ACCESS_COUNTER,
};
use crate::{CliError, CommonOpts};

pub const DEFAULT_CAPACITY_BYTES: u64 = 256 << 30;

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Raw trace written by `sim`.
    #[arg(long)]
    pub trace: PathBuf,
    /// Manifest written by `sim`; supplies timescale, counters and defaults
    /// for tags, phases and RSS.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Region tags, one `name start end` per line.
    #[arg(long)]
    pub tags: Option<PathBuf>,
    /// Phases, one `name t_start t_end` per line (`-` leaves it open).
    #[arg(long)]
    pub phases: Option<PathBuf>,
    /// Resident set samples, one `t_ns bytes` per line.
    #[arg(long)]
    pub rss: Option<PathBuf>,
    /// Restrict the region profile and scatter to one phase.
    #[arg(long)]
    pub phase: Option<String>,
    /// Installed memory, for peak utilization.
    #[arg(long, default_value_t = DEFAULT_CAPACITY_BYTES)]
    pub capacity_bytes: u64,
    #[arg(long, default_value_t = DEFAULT_BYTES_PER_EVENT)]
    pub bytes_per_event: u64,
    #[command(flatten)]
    pub common: CommonOpts,
}

fn open_text<T>(
    path: &Path,
    parse: impl FnOnce(BufReader<File>) -> Result<T, ProfileError>,
) -> Result<T, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    parse(BufReader::new(file)).map_err(|e| match e {
        ProfileError::Io(source) => CliError::io(path, source),
        e => CliError::config(format!("{}: {e}", path.display())),
    })
}

pub fn run(args: &AnalyzeArgs) -> Result<(), CliError> {
    let manifest: Option<Manifest> = args.manifest.as_deref().map(read_json).transpose()?;
    let tags = args
        .tags
        .as_deref()
        .map(|p| open_text(p, parse_tags))
        .transpose()?;
    let phases = args
        .phases
        .as_deref()
        .map(|p| open_text(p, parse_phases))
        .transpose()?;
    let mut trace = load_trace(&args.trace, manifest.as_ref(), tags, phases)?;
    if let Some(path) = &args.rss {
        trace.rss_series = open_text(path, read_rss)?;
    }
    validate_rss(&trace.rss_series)?;

    let out = &args.common.out_dir;
    let mut jsonl = Vec::new();
    write_jsonl(&trace, &mut jsonl)?;
    write_out(out, "trace.jsonl", &jsonl)?;

    let capacity = capacity_series(&trace, args.capacity_bytes)?;
    let rows = capacity
        .series
        .iter()
        .map(|&(t, b)| vec![t.to_string(), b.to_string()]);
    write_out(out, "capacity.csv", &csv_bytes(&["t_ns", "bytes"], rows))?;

    let bandwidth = match (&manifest, trace.counters.get(MEM_ACCESS_COUNTER)) {
        (Some(m), Some(counts)) => {
            bandwidth_series(counts, m.counter_interval_ns, args.bytes_per_event)?
        }
        _ => Vec::new(),
    };
    let rows = bandwidth
        .iter()
        .map(|p| vec![p.t_ns.to_string(), p.bytes_per_second.to_string()]);
    write_out(
        out,
        "bandwidth.csv",
        &csv_bytes(&["t_ns", "bytes_per_s"], rows),
    )?;

    let profile = region_profile(&trace, args.phase.as_deref())?;
    write_out(out, "regions.json", &json_bytes(&profile))?;

    let rows = trace
        .samples
        .iter()
        .filter(|s| args.phase.is_none() || s.phase == args.phase)
        .map(|s| {
            vec![
                s.t_ns.to_string(),
                hex(s.virtual_address),
                s.region.clone().unwrap_or_default(),
                s.phase.clone().unwrap_or_default(),
            ]
        });
    write_out(
        out,
        "scatter.csv",
        &csv_bytes(&["t_ns", "address", "region", "phase"], rows),
    )?;
    Ok(())
}
