use std::io::BufRead;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{encode_perf_attr, AttrSpec, ProfileConfig};
use super::trace::{build_trace, NormalizedTrace};
use super::ProfileError;
use crate::serde_hex as hex_u64;
use crate::transport::TimescaleParams;

pub trait Clock {
    fn now_ns(&self) -> u64;
}

/// Nanoseconds since construction.
#[derive(Debug, Clone, Copy)]
pub struct MonotonicClock {
    origin: Instant,
}

impl MonotonicClock {
    pub fn new() -> Self {
        MonotonicClock {
            origin: Instant::now(),
        }
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for MonotonicClock {
    fn now_ns(&self) -> u64 {
        self.origin.elapsed().as_nanos() as u64
    }
}

/// A clock moved by hand; clones share the same time.
#[derive(Debug, Clone, Default)]
pub struct ManualClock {
    now: Arc<AtomicU64>,
}

impl ManualClock {
    pub fn new(start_ns: u64) -> Self {
        ManualClock {
            now: Arc::new(AtomicU64::new(start_ns)),
        }
    }

    pub fn set(&self, t_ns: u64) {
        self.now.store(t_ns, Ordering::SeqCst);
    }

    pub fn advance(&self, dt_ns: u64) {
        self.now.fetch_add(dt_ns, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ns(&self) -> u64 {
        self.now.load(Ordering::SeqCst)
    }
}

/// Named half-open address range `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionTag {
    pub name: String,
    #[serde(with = "hex_u64")]
    pub start: u64,
    #[serde(with = "hex_u64")]
    pub end: u64,
}

impl RegionTag {
    pub fn new(name: impl Into<String>, start: u64, end: u64) -> Self {
        RegionTag {
            name: name.into(),
            start,
            end,
        }
    }

    pub fn contains(&self, address: u64) -> bool {
        self.start <= address && address < self.end
    }
}

/// Pairwise disjoint region tags, kept sorted by start address.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TagRegistry {
    tags: Vec<RegionTag>,
}

impl TagRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_tags(tags: impl IntoIterator<Item = RegionTag>) -> Result<Self, ProfileError> {
        let mut reg = TagRegistry::new();
        for t in tags {
            reg.insert(t)?;
        }
        Ok(reg)
    }

    pub fn insert(&mut self, tag: RegionTag) -> Result<(), ProfileError> {
        if tag.start >= tag.end {
            return Err(ProfileError::InvertedRange {
                name: tag.name,
                start: tag.start,
                end: tag.end,
            });
        }
        if self.tags.iter().any(|t| t.name == tag.name) {
            return Err(ProfileError::DuplicateTag(tag.name));
        }
        let pos = self.tags.partition_point(|t| t.start < tag.start);
        let clash = [pos.checked_sub(1), Some(pos)]
            .into_iter()
            .flatten()
            .filter_map(|i| self.tags.get(i))
            .find(|t| t.start < tag.end && tag.start < t.end);
        if let Some(existing) = clash {
            return Err(ProfileError::TagOverlap {
                name: tag.name,
                existing: existing.name.clone(),
            });
        }
        self.tags.insert(pos, tag);
        Ok(())
    }

    pub fn lookup(&self, address: u64) -> Option<&RegionTag> {
        let pos = self.tags.partition_point(|t| t.start <= address);
        pos.checked_sub(1)
            .map(|i| &self.tags[i])
            .filter(|t| t.contains(address))
    }

    pub fn tags(&self) -> &[RegionTag] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }
}

/// Named half-open time interval `[t_start, t_end)`; `t_end` is `None`
/// while the phase is open.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseTag {
    pub name: String,
    pub t_start: u64,
    pub t_end: Option<u64>,
}

impl PhaseTag {
    pub fn contains(&self, t_ns: u64) -> bool {
        self.t_start <= t_ns && self.t_end.is_none_or(|end| t_ns < end)
    }
}

/// Non-overlapping phases sorted by start time. Only the last may be open.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PhaseSet {
    phases: Vec<PhaseTag>,
}

impl PhaseSet {
    pub fn new(mut phases: Vec<PhaseTag>) -> Result<Self, ProfileError> {
        phases.sort_by_key(|p| p.t_start);
        for (i, p) in phases.iter().enumerate() {
            match p.t_end {
                Some(end) if end < p.t_start => {
                    return Err(ProfileError::InvalidPhases(format!(
                        "phase {:?} ends before it starts",
                        p.name
                    )))
                }
                None if i + 1 != phases.len() => {
                    return Err(ProfileError::InvalidPhases(format!(
                        "phase {:?} is open while a later phase exists",
                        p.name
                    )))
                }
                _ => {}
            }
        }
        for w in phases.windows(2) {
            if w[0].t_end.is_none_or(|end| end > w[1].t_start) {
                return Err(ProfileError::InvalidPhases(format!(
                    "phases {:?} and {:?} overlap",
                    w[0].name, w[1].name
                )));
            }
        }
        Ok(PhaseSet { phases })
    }

    pub fn lookup(&self, t_ns: u64) -> Option<&PhaseTag> {
        let pos = self.phases.partition_point(|p| p.t_start <= t_ns);
        pos.checked_sub(1)
            .map(|i| &self.phases[i])
            .filter(|p| p.contains(t_ns))
    }

    pub fn phases(&self) -> &[PhaseTag] {
        &self.phases
    }

    pub fn has_name(&self, name: &str) -> bool {
        self.phases.iter().any(|p| p.name == name)
    }
}

pub fn validate_rss(series: &[(u64, u64)]) -> Result<(), ProfileError> {
    match series.windows(2).position(|w| w[1].0 < w[0].0) {
        Some(i) => Err(ProfileError::RssOutOfOrder { index: i + 1 }),
        None => Ok(()),
    }
}

/// Yields `(line_number, fields)` for each non-blank, non-comment line.
fn data_lines<R: BufRead>(
    reader: R,
) -> impl Iterator<Item = Result<(usize, Vec<String>), ProfileError>> {
    reader
        .lines()
        .enumerate()
        .filter_map(|(i, line)| match line {
            Err(e) => Some(Err(e.into())),
            Ok(line) => {
                let body = line.split('#').next().unwrap_or("").trim();
                (!body.is_empty())
                    .then(|| Ok((i + 1, body.split_whitespace().map(str::to_owned).collect())))
            }
        })
}

fn parse_num(line: usize, field: &str, what: &str) -> Result<u64, ProfileError> {
    let parsed = match field
        .strip_prefix("0x")
        .or_else(|| field.strip_prefix("0X"))
    {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => field.parse(),
    };
    parsed.map_err(|_| ProfileError::parse(line, format!("invalid {what} {field:?}")))
}

fn expect_fields(line: usize, fields: &[String], n: usize, form: &str) -> Result<(), ProfileError> {
    if fields.len() == n {
        Ok(())
    } else {
        Err(ProfileError::parse(
            line,
            format!("expected \"{form}\", got {} fields", fields.len()),
        ))
    }
}

/// Reads `t_ns bytes` lines.
pub fn read_rss<R: BufRead>(reader: R) -> Result<Vec<(u64, u64)>, ProfileError> {
    let mut out = Vec::new();
    for item in data_lines(reader) {
        let (line, f) = item?;
        expect_fields(line, &f, 2, "t_ns bytes")?;
        let t = parse_num(line, &f[0], "time")?;
        if out.last().is_some_and(|&(prev, _)| t < prev) {
            return Err(ProfileError::parse(line, "time goes backwards"));
        }
        out.push((t, parse_num(line, &f[1], "byte count")?));
    }
    Ok(out)
}

/// Reads `name start end` lines; addresses in decimal or `0x` hex.
pub fn parse_tags<R: BufRead>(reader: R) -> Result<TagRegistry, ProfileError> {
    let mut reg = TagRegistry::new();
    for item in data_lines(reader) {
        let (line, f) = item?;
        expect_fields(line, &f, 3, "name start end")?;
        let start = parse_num(line, &f[1], "start address")?;
        let end = parse_num(line, &f[2], "end address")?;
        reg.insert(RegionTag::new(f[0].clone(), start, end))?;
    }
    Ok(reg)
}

/// Reads `name t_start t_end` lines; `-` as `t_end` leaves the phase open.
pub fn parse_phases<R: BufRead>(reader: R) -> Result<PhaseSet, ProfileError> {
    let mut phases = Vec::new();
    for item in data_lines(reader) {
        let (line, f) = item?;
        expect_fields(line, &f, 3, "name t_start t_end")?;
        let t_start = parse_num(line, &f[1], "start time")?;
        let t_end = match f[2].as_str() {
            "-" => None,
            s => Some(parse_num(line, s, "end time")?),
        };
        phases.push(PhaseTag {
            name: f[0].clone(),
            t_start,
            t_end,
        });
    }
    PhaseSet::new(phases)
}

/// Annotation state for one profiled run.
#[derive(Debug)]
pub struct Session<C: Clock = MonotonicClock> {
    config: ProfileConfig,
    clock: C,
    tags: TagRegistry,
    phases: Vec<PhaseTag>,
    rss: Vec<(u64, u64)>,
}

impl Session<MonotonicClock> {
    pub fn new(config: ProfileConfig) -> Self {
        Session::with_clock(config, MonotonicClock::new())
    }
}

impl<C: Clock> Session<C> {
    pub fn with_clock(config: ProfileConfig, clock: C) -> Self {
        Session {
            config,
            clock,
            tags: TagRegistry::new(),
            phases: Vec::new(),
            rss: Vec::new(),
        }
    }

    pub fn config(&self) -> &ProfileConfig {
        &self.config
    }

    /// Attribute record for the sampling unit, or why sampling is off.
    pub fn attr(&self) -> Result<AttrSpec, ProfileError> {
        if !self.config.enable {
            return Err(ProfileError::SamplingDisabled(
                "profiling is not enabled".into(),
            ));
        }
        encode_perf_attr(&self.config)
    }

    pub fn tag_addr(&mut self, name: &str, start: u64, end: u64) -> Result<(), ProfileError> {
        self.tags.insert(RegionTag::new(name, start, end))
    }

    pub fn tags(&self) -> &TagRegistry {
        &self.tags
    }

    pub fn phase_start(&mut self, name: &str) -> Result<(), ProfileError> {
        if let Some(open) = self.phases.last().filter(|p| p.t_end.is_none()) {
            return Err(ProfileError::PhaseAlreadyOpen(open.name.clone()));
        }
        let now = self.clock.now_ns();
        if let Some(end) = self.phases.last().and_then(|p| p.t_end) {
            if now < end {
                return Err(ProfileError::InvalidPhases(format!(
                    "clock went backwards before {name:?}"
                )));
            }
        }
        self.phases.push(PhaseTag {
            name: name.to_owned(),
            t_start: now,
            t_end: None,
        });
        Ok(())
    }

    pub fn phase_stop(&mut self) -> Result<(), ProfileError> {
        let now = self.clock.now_ns();
        let open = self
            .phases
            .last_mut()
            .filter(|p| p.t_end.is_none())
            .ok_or(ProfileError::NoOpenPhase)?;
        if now < open.t_start {
            return Err(ProfileError::InvalidPhases(format!(
                "clock went backwards during {:?}",
                open.name
            )));
        }
        open.t_end = Some(now);
        Ok(())
    }

    pub fn phases(&self) -> PhaseSet {
        PhaseSet {
            phases: self.phases.clone(),
        }
    }

    /// Appends resident-set samples; time must not go backwards, including
    /// across calls.
    pub fn ingest_rss(&mut self, series: &[(u64, u64)]) -> Result<(), ProfileError> {
        validate_rss(series)?;
        if let (Some(&(last, _)), Some(&(first, _))) = (self.rss.last(), series.first()) {
            if first < last {
                return Err(ProfileError::RssOutOfOrder { index: 0 });
            }
        }
        self.rss.extend_from_slice(series);
        Ok(())
    }

    pub fn rss(&self) -> &[(u64, u64)] {
        &self.rss
    }

    pub fn build_trace(
        &self,
        raw: &[u8],
        params: &TimescaleParams,
    ) -> Result<NormalizedTrace, ProfileError> {
        let mut trace = build_trace(raw, &self.tags, &self.phases(), params)?;
        trace.rss_series = self.rss.clone();
        Ok(trace)
    }
}
