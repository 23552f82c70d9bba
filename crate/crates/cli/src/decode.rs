use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use serde_json::json;

use nmo_core::profiler::{
    build_trace, NormalizedTrace, PhaseSet, TagRegistry, COUNTER_ACCEPTED, COUNTER_AUX_COLLISION,
    COUNTER_AUX_RECORDS, COUNTER_AUX_TRUNCATED,
};
use nmo_core::transport::TimescaleParams;

use crate::files::{read_bytes, read_json, Manifest};
use crate::{CliError, CommonOpts};

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// Raw trace written by `sim`.
    #[arg(long)]
    pub trace: PathBuf,
    /// Manifest supplying timescale, region tags and phases.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonOpts,
}

/// Decodes a raw trace with the labels and timescale of an optional
/// manifest.
pub fn load_trace(
    trace: &Path,
    manifest: Option<&Manifest>,
    tags: Option<TagRegistry>,
    phases: Option<PhaseSet>,
) -> Result<NormalizedTrace, CliError> {
    let raw = read_bytes(trace)?;
    let tags = match (tags, manifest) {
        (Some(t), _) => t,
        (None, Some(m)) => TagRegistry::from_tags(m.tags.iter().cloned())?,
        (None, None) => TagRegistry::new(),
    };
    let phases = match (phases, manifest) {
        (Some(p), _) => p,
        (None, Some(m)) => PhaseSet::new(m.phases.clone())?,
        (None, None) => PhaseSet::default(),
    };
    let params = manifest.map_or_else(TimescaleParams::default, |m| m.timescale);
    let mut normalized = build_trace(&raw, &tags, &phases, &params)?;
    if let Some(m) = manifest {
        normalized.rss_series = m.rss_series.clone();
        for (name, series) in &m.counters {
            normalized.counters.insert(name.clone(), series.clone());
        }
    }
    Ok(normalized)
}

pub fn run(
    args: &DecodeArgs,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), CliError> {
    let manifest: Option<Manifest> = args.manifest.as_deref().map(read_json).transpose()?;
    let trace = load_trace(&args.trace, manifest.as_ref(), None, None)?;
    let out_err = |e| CliError::io("<stdout>", e);
    for s in &trace.samples {
        serde_json::to_writer(&mut *stdout, s).map_err(|e| out_err(e.into()))?;
        stdout.write_all(b"\n").map_err(out_err)?;
    }
    let total = |name| trace.counter_total(name).unwrap_or(0);
    let stats = json!({
        "accepted": total(COUNTER_ACCEPTED),
        "skipped": trace.skip_stats(),
        "aux_records": total(COUNTER_AUX_RECORDS),
        "aux_truncated": total(COUNTER_AUX_TRUNCATED),
        "aux_collision": total(COUNTER_AUX_COLLISION),
    });
    let _ = writeln!(stderr, "{stats}");
    Ok(())
}
