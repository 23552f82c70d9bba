use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::codec::OpKind;
use crate::profiler::NormalizedTrace;
use crate::serde_hex as hex_u64;

/// Profile key for samples outside every region tag.
pub const UNTAGGED: &str = "(untagged)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub t_ns: u64,
    #[serde(with = "hex_u64")]
    pub address: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionStats {
    pub access_count: u64,
    pub load_count: u64,
    pub store_count: u64,
    pub first_t: Option<u64>,
    pub last_t: Option<u64>,
    pub scatter: Vec<ScatterPoint>,
}

/// Per-region sample statistics. Every registered tag has an entry, as
/// does [`UNTAGGED`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionProfile {
    pub phase: Option<String>,
    pub regions: BTreeMap<String, RegionStats>,
}

impl RegionProfile {
    /// Samples attributed to a registered tag.
    pub fn attributed(&self) -> u64 {
        self.regions
            .iter()
            .filter(|(k, _)| k.as_str() != UNTAGGED)
            .map(|(_, v)| v.access_count)
            .sum()
    }

    pub fn untagged(&self) -> u64 {
        self.regions.get(UNTAGGED).map_or(0, |r| r.access_count)
    }
}

/// Groups samples by region, optionally keeping only those labeled with
/// `phase`.
pub fn region_profile(
    trace: &NormalizedTrace,
    phase: Option<&str>,
) -> Result<RegionProfile, AnalysisError> {
    if let Some(name) = phase {
        if !trace.phases.iter().any(|p| p.name == name) {
            return Err(AnalysisError::UnknownPhase(name.to_owned()));
        }
    }
    let mut regions: BTreeMap<String, RegionStats> = trace
        .tags
        .iter()
        .map(|t| (t.name.clone(), RegionStats::default()))
        .collect();
    regions.insert(UNTAGGED.to_owned(), RegionStats::default());

    for s in &trace.samples {
        if phase.is_some() && s.phase.as_deref() != phase {
            continue;
        }
        let key = s.region.as_deref().unwrap_or(UNTAGGED);
        let stats = match regions.get_mut(key) {
            Some(stats) => stats,
            None => {
                return Err(AnalysisError::InvalidInput(format!(
                    "sample labeled with unregistered region {key:?}"
                )))
            }
        };
        stats.access_count += 1;
        match s.op_kind {
            OpKind::Load => stats.load_count += 1,
            OpKind::Store => stats.store_count += 1,
        }
        stats.first_t.get_or_insert(s.t_ns);
        stats.last_t = Some(s.t_ns);
        stats.scatter.push(ScatterPoint {
            t_ns: s.t_ns,
            address: s.virtual_address,
        });
    }
    Ok(RegionProfile {
        phase: phase.map(str::to_owned),
        regions,
    })
}
