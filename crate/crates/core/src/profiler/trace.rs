use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::session::{PhaseSet, PhaseTag, RegionTag, TagRegistry};
use super::ProfileError;
use crate::codec::{decode_stream, MemoryLevel, OpKind, SkipReason, SkipStats};
use crate::serde_hex as hex_u64;
use crate::transport::{convert_timestamp, AuxFlags, TimescaleParams, TraceFile};

/// Named counter timeseries of `(t_ns, count)` points.
pub type TraceCounters = BTreeMap<String, Vec<(u64, u64)>>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceSample {
    pub t_ns: u64,
    #[serde(with = "hex_u64")]
    pub virtual_address: u64,
    pub op_kind: OpKind,
    pub memory_level: MemoryLevel,
    pub latency: u32,
    pub core_id: u16,
    pub phase: Option<String>,
    pub region: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NormalizedTrace {
    pub tags: Vec<RegionTag>,
    pub phases: Vec<PhaseTag>,
    /// Sorted by `t_ns`; ties keep core order, then stream order.
    pub samples: Vec<TraceSample>,
    pub rss_series: Vec<(u64, u64)>,
    pub counters: TraceCounters,
}

pub const COUNTER_ACCEPTED: &str = "decode.accepted";
pub const COUNTER_AUX_RECORDS: &str = "aux.records";
pub const COUNTER_AUX_TRUNCATED: &str = "aux.truncated";
pub const COUNTER_AUX_COLLISION: &str = "aux.collision";

fn skip_counter(reason: SkipReason) -> String {
    format!("decode.skip.{}", reason.name())
}

impl NormalizedTrace {
    /// Sum over all points of a counter, if present.
    pub fn counter_total(&self, name: &str) -> Option<u64> {
        self.counters.get(name).map(|s| s.iter().map(|p| p.1).sum())
    }

    pub fn skip_stats(&self) -> SkipStats {
        let get = |r| self.counter_total(&skip_counter(r)).unwrap_or(0);
        SkipStats {
            bad_address_marker: get(SkipReason::BadAddressMarker),
            bad_timestamp_marker: get(SkipReason::BadTimestampMarker),
            zero_address: get(SkipReason::ZeroAddress),
            zero_timestamp: get(SkipReason::ZeroTimestamp),
        }
    }
}

/// Decodes every core's aux payload, converts timestamps, merges cores by
/// time, and labels samples with their region and phase.
pub fn build_trace(
    raw: &[u8],
    tags: &TagRegistry,
    phases: &PhaseSet,
    params: &TimescaleParams,
) -> Result<NormalizedTrace, ProfileError> {
    let file = TraceFile::from_bytes(raw)?;
    let mut samples = Vec::new();
    let mut skips = SkipStats::default();
    let (mut records, mut truncated, mut collision) = (0u64, 0u64, 0u64);

    for core in &file.cores {
        let payload: Vec<u8> = core
            .chunks
            .iter()
            .flat_map(|c| c.payload.iter().copied())
            .collect();
        let (decoded, stats) = decode_stream(&payload).map_err(|source| ProfileError::Codec {
            core: core.core_id,
            source,
        })?;
        skips.merge(&stats);
        for chunk in &core.chunks {
            records += 1;
            truncated += u64::from(chunk.record.flags.contains(AuxFlags::TRUNCATED));
            collision += u64::from(chunk.record.flags.contains(AuxFlags::COLLISION));
        }
        samples.extend(decoded.into_iter().map(|r| {
            let t_ns = convert_timestamp(r.timestamp, params);
            TraceSample {
                t_ns,
                virtual_address: r.virtual_address,
                op_kind: r.op_kind,
                memory_level: r.memory_level,
                latency: r.latency_cycles,
                core_id: r.core_id,
                phase: phases.lookup(t_ns).map(|p| p.name.clone()),
                region: tags.lookup(r.virtual_address).map(|t| t.name.clone()),
            }
        }));
    }
    samples.sort_by_key(|s| s.t_ns);

    let t_last = samples.last().map_or(0, |s| s.t_ns);
    let mut counters = TraceCounters::new();
    let mut put = |name: String, value: u64| {
        counters.insert(name, vec![(t_last, value)]);
    };
    put(COUNTER_ACCEPTED.into(), samples.len() as u64);
    for reason in SkipReason::ALL {
        put(skip_counter(reason), skips.get(reason));
    }
    put(COUNTER_AUX_RECORDS.into(), records);
    put(COUNTER_AUX_TRUNCATED.into(), truncated);
    put(COUNTER_AUX_COLLISION.into(), collision);

    Ok(NormalizedTrace {
        tags: tags.tags().to_vec(),
        phases: phases.phases().to_vec(),
        samples,
        rss_series: Vec::new(),
        counters,
    })
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    tags: Vec<RegionTag>,
    phases: Vec<PhaseTag>,
    rss_series: Vec<(u64, u64)>,
    counters: TraceCounters,
    samples: u64,
}

const HEADER_KIND: &str = "nmo-trace";

/// One header object line, then one line per sample.
pub fn write_jsonl<W: Write>(trace: &NormalizedTrace, mut out: W) -> Result<(), ProfileError> {
    let header = Header {
        kind: HEADER_KIND.into(),
        tags: trace.tags.clone(),
        phases: trace.phases.clone(),
        rss_series: trace.rss_series.clone(),
        counters: trace.counters.clone(),
        samples: trace.samples.len() as u64,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for s in &trace.samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<NormalizedTrace, ProfileError> {
    let mut lines = input.lines().enumerate();
    let header: Header = match lines.next() {
        Some((_, line)) => {
            serde_json::from_str(&line?).map_err(|e| ProfileError::parse(1, e.to_string()))?
        }
        None => return Err(ProfileError::parse(1, "missing header")),
    };
    if header.kind != HEADER_KIND {
        return Err(ProfileError::parse(
            1,
            format!("unexpected header kind {:?}", header.kind),
        ));
    }
    let mut samples = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        samples.push(
            serde_json::from_str(&line).map_err(|e| ProfileError::parse(i + 1, e.to_string()))?,
        );
    }
    if samples.len() as u64 != header.samples {
        return Err(ProfileError::parse(
            samples.len() + 1,
            format!(
                "header announces {} samples, found {}",
                header.samples,
                samples.len()
            ),
        ));
    }
    Ok(NormalizedTrace {
        tags: header.tags,
        phases: header.phases,
        samples,
        rss_series: header.rss_series,
        counters: header.counters,
    })
}
