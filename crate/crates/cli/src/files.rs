use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use nmo_core::profiler::{AttrSpec, PhaseTag, ProfileConfig, RegionTag};
use nmo_core::sim::{MemoryModel, SamplerConfig, SimOutcome, WorkloadSpec};
use nmo_core::transport::TimescaleParams;

use crate::CliError;

/// Counter name for ground-truth memory operations per interval.
pub const MEM_ACCESS_COUNTER: &str = "mem_access";

/// Everything `sim` knew about a run, written next to the raw trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub trace_file: String,
    pub config: ProfileConfig,
    pub sampling_enabled: bool,
    pub attr: Option<AttrSpec>,
    pub seed: u64,
    pub workload: WorkloadSpec,
    pub model: MemoryModel,
    pub sampler: SamplerConfig,
    pub timescale: TimescaleParams,
    pub tags: Vec<RegionTag>,
    pub phases: Vec<PhaseTag>,
    pub counter_interval_ns: u64,
    pub counters: BTreeMap<String, Vec<(u64, u64)>>,
    pub rss_series: Vec<(u64, u64)>,
    pub outcome: SimOutcome,
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

/// Writes `bytes` to `dir/name`, creating `dir` as needed.
pub fn write_out(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

/// Pretty JSON with a trailing newline.
pub fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable value");
    out.push(b'\n');
    out
}

/// CSV text from a header and pre-formatted fields.
pub fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn hex(v: u64) -> String {
    format!("{v:#x}")
}
