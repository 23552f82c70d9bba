//! Synthetic memory-operation streams.
//!
//! * `StreamTriad`: the first region is the destination, the rest are
//!   sources. Each element `i` issues a load from every source region and
//!   then a store to the destination (`a[i] = b[i] + s * c[i]` for regions
//!   `a, b, c`). A single region degenerates to load-then-store of the same
//!   element. Threads own contiguous, near-equal slices of the element range
//!   and sweep them repeatedly until their share of operations is used up.
//! * `RandomGraph`: addresses drawn uniformly (by element) over all regions,
//!   loads with probability `load_fraction`.
//! * `Mixed`: each operation is a triad step or a random access with equal
//!   probability.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::codec::OpKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WorkloadKind {
    StreamTriad,
    RandomGraph,
    Mixed,
}

impl WorkloadKind {
    /// Name used for the phase that spans a simulated run.
    pub fn phase_name(self) -> &'static str {
        match self {
            WorkloadKind::StreamTriad => "triad",
            WorkloadKind::RandomGraph => "bfs",
            WorkloadKind::Mixed => "mixed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub name: String,
    pub base_address: u64,
    pub length_bytes: u64,
}

impl Region {
    pub fn new(name: impl Into<String>, base_address: u64, length_bytes: u64) -> Self {
        Region {
            name: name.into(),
            base_address,
            length_bytes,
        }
    }

    pub fn end(&self) -> u64 {
        self.base_address + self.length_bytes
    }
}

fn default_threads() -> u32 {
    1
}
fn default_load_fraction() -> f64 {
    0.5
}
fn default_stride() -> u64 {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub total_ops: u64,
    #[serde(default = "default_threads")]
    pub threads: u32,
    pub region_layout: Vec<Region>,
    /// Only used by the random parts of `RandomGraph` and `Mixed`.
    #[serde(default = "default_load_fraction")]
    pub load_fraction: f64,
    #[serde(default = "default_stride")]
    pub stride_bytes: u64,
    #[serde(default)]
    pub seed: u64,
}

impl WorkloadSpec {
    /// Three equally sized arrays `a`, `b`, `c` of `array_bytes` each,
    /// laid out back to back from 0x10_0000_0000.
    pub fn stream_triad(total_ops: u64, threads: u32, array_bytes: u64) -> Self {
        let base = 0x10_0000_0000u64;
        let region_layout = ["a", "b", "c"]
            .iter()
            .enumerate()
            .map(|(i, name)| Region::new(*name, base + i as u64 * array_bytes, array_bytes))
            .collect();
        WorkloadSpec {
            kind: WorkloadKind::StreamTriad,
            total_ops,
            threads,
            region_layout,
            load_fraction: 2.0 / 3.0,
            stride_bytes: 8,
            seed: 0,
        }
    }
}

/// One memory operation of the synthetic program.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemOp {
    pub address: u64,
    pub op_kind: OpKind,
    pub core_id: u16,
}

/// A validated workload. Per-core streams are produced lazily.
#[derive(Debug, Clone)]
pub struct OpStream {
    spec: WorkloadSpec,
    /// Elements per region available to the triad pattern.
    triad_elems: u64,
    /// Cumulative element counts per region, for random picks.
    cumulative_elems: Vec<u64>,
}

pub fn gen_workload(spec: &WorkloadSpec) -> Result<OpStream, SimError> {
    let bad = |m: String| Err(SimError::InvalidWorkload(m));
    if spec.region_layout.is_empty() {
        return bad("region layout is empty".into());
    }
    if spec.total_ops == 0 {
        return bad("total_ops must be at least 1".into());
    }
    if spec.threads == 0 || spec.threads > u32::from(u16::MAX) + 1 {
        return bad(format!("thread count {} out of range", spec.threads));
    }
    if spec.stride_bytes == 0 {
        return bad("stride must be positive".into());
    }
    if !(0.0..=1.0).contains(&spec.load_fraction) {
        return bad(format!(
            "load fraction {} outside [0, 1]",
            spec.load_fraction
        ));
    }
    for r in &spec.region_layout {
        if r.base_address == 0 {
            return bad(format!("region {:?} starts at address 0", r.name));
        }
        if r.length_bytes < spec.stride_bytes {
            return bad(format!("region {:?} is shorter than one stride", r.name));
        }
        if r.base_address.checked_add(r.length_bytes).is_none() {
            return bad(format!("region {:?} overflows the address space", r.name));
        }
    }
    let mut sorted: Vec<&Region> = spec.region_layout.iter().collect();
    sorted.sort_by_key(|r| r.base_address);
    for w in sorted.windows(2) {
        if w[0].end() > w[1].base_address {
            return bad(format!(
                "regions {:?} and {:?} overlap",
                w[0].name, w[1].name
            ));
        }
    }

    let triad_elems = spec
        .region_layout
        .iter()
        .map(|r| r.length_bytes / spec.stride_bytes)
        .min()
        .unwrap();
    if spec.kind != WorkloadKind::RandomGraph && triad_elems < u64::from(spec.threads) {
        return bad(format!(
            "{triad_elems} elements cannot be split across {} threads",
            spec.threads
        ));
    }
    let cumulative_elems = spec
        .region_layout
        .iter()
        .scan(0u64, |acc, r| {
            *acc += r.length_bytes / spec.stride_bytes;
            Some(*acc)
        })
        .collect();
    Ok(OpStream {
        spec: spec.clone(),
        triad_elems,
        cumulative_elems,
    })
}

impl OpStream {
    pub fn spec(&self) -> &WorkloadSpec {
        &self.spec
    }

    pub fn threads(&self) -> u32 {
        self.spec.threads
    }

    /// Operations executed by one thread; shares differ by at most one.
    pub fn ops_for_core(&self, core: u32) -> u64 {
        let total = u128::from(self.spec.total_ops);
        let t = u128::from(self.spec.threads);
        let c = u128::from(core);
        ((total * (c + 1)) / t - (total * c) / t) as u64
    }

    /// Element indices owned by a thread in the triad pattern.
    pub fn triad_elements(&self, core: u32) -> Range<u64> {
        let n = u128::from(self.triad_elems);
        let t = u128::from(self.spec.threads);
        let c = u128::from(core);
        ((n * c / t) as u64)..((n * (c + 1) / t) as u64)
    }

    /// Byte range a thread touches inside one region in the triad pattern.
    pub fn triad_slice(&self, core: u32, region: usize) -> Range<u64> {
        let elems = self.triad_elements(core);
        let r = &self.spec.region_layout[region];
        let stride = self.spec.stride_bytes;
        (r.base_address + elems.start * stride)..(r.base_address + elems.end * stride)
    }

    pub fn core_ops(&self, core: u32) -> CoreOps<'_> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        rng.set_stream(u64::from(core));
        let elems = self.triad_elements(core);
        CoreOps {
            stream: self,
            core,
            remaining: self.ops_for_core(core),
            triad_step: 0,
            triad_first: elems.start,
            triad_len: elems.end - elems.start,
            rng,
        }
    }

    /// All operations, core by core.
    pub fn iter(&self) -> impl Iterator<Item = MemOp> + '_ {
        (0..self.spec.threads).flat_map(move |c| self.core_ops(c))
    }

    fn ops_per_element(&self) -> u64 {
        self.spec.region_layout.len().max(2) as u64
    }
}

/// Lazily generated operations of one thread.
pub struct CoreOps<'a> {
    stream: &'a OpStream,
    core: u32,
    remaining: u64,
    triad_step: u64,
    triad_first: u64,
    triad_len: u64,
    rng: ChaCha8Rng,
}

impl CoreOps<'_> {
    fn next_triad(&mut self) -> (u64, OpKind) {
        let spec = &self.stream.spec;
        let per_elem = self.stream.ops_per_element();
        let step = self.triad_step;
        self.triad_step += 1;
        let elem = self.triad_first + (step / per_elem) % self.triad_len;
        let slot = step % per_elem;
        let regions = &spec.region_layout;
        let (region, kind) = if slot + 1 == per_elem {
            (&regions[0], OpKind::Store)
        } else if regions.len() == 1 {
            (&regions[0], OpKind::Load)
        } else {
            (&regions[slot as usize + 1], OpKind::Load)
        };
        (region.base_address + elem * spec.stride_bytes, kind)
    }

    fn next_random(&mut self) -> (u64, OpKind) {
        let spec = &self.stream.spec;
        let cum = &self.stream.cumulative_elems;
        let pick = self.rng.gen_range(0..*cum.last().unwrap());
        let idx = cum.partition_point(|&c| c <= pick);
        let before = if idx == 0 { 0 } else { cum[idx - 1] };
        let address = spec.region_layout[idx].base_address + (pick - before) * spec.stride_bytes;
        let kind = if self.rng.gen_bool(spec.load_fraction) {
            OpKind::Load
        } else {
            OpKind::Store
        };
        (address, kind)
    }
}

impl Iterator for CoreOps<'_> {
    type Item = MemOp;

    fn next(&mut self) -> Option<MemOp> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let (address, op_kind) = match self.stream.spec.kind {
            WorkloadKind::StreamTriad => self.next_triad(),
            WorkloadKind::RandomGraph => self.next_random(),
            WorkloadKind::Mixed => {
                if self.rng.gen_bool(0.5) {
                    self.next_triad()
                } else {
                    self.next_random()
                }
            }
        };
        Some(MemOp {
            address,
            op_kind,
            core_id: self.core as u16,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.remaining as usize;
        (n, Some(n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_region(kind: WorkloadKind, total_ops: u64, threads: u32) -> WorkloadSpec {
        WorkloadSpec {
            kind,
            total_ops,
            threads,
            region_layout: vec![
                Region::new("a", 0x1000, 0x1000),
                Region::new("b", 0x4000, 0x1000),
            ],
            load_fraction: 0.5,
            stride_bytes: 8,
            seed: 42,
        }
    }

    #[test]
    fn triad_two_regions_by_hand() {
        let s = gen_workload(&two_region(WorkloadKind::StreamTriad, 6, 1)).unwrap();
        let ops: Vec<(u64, OpKind)> = s.iter().map(|o| (o.address, o.op_kind)).collect();
        assert_eq!(
            ops,
            vec![
                (0x4000, OpKind::Load),
                (0x1000, OpKind::Store),
                (0x4008, OpKind::Load),
                (0x1008, OpKind::Store),
                (0x4010, OpKind::Load),
                (0x1010, OpKind::Store),
            ]
        );
    }

    #[test]
    fn triad_three_regions_order_is_b_c_a() {
        let spec = WorkloadSpec::stream_triad(6, 1, 1 << 20);
        let s = gen_workload(&spec).unwrap();
        let names: Vec<&str> = s
            .iter()
            .map(|o| {
                spec.region_layout
                    .iter()
                    .find(|r| (r.base_address..r.end()).contains(&o.address))
                    .unwrap()
                    .name
                    .as_str()
            })
            .collect();
        assert_eq!(names, ["b", "c", "a", "b", "c", "a"]);
    }

    #[test]
    fn single_region_is_read_modify_write() {
        let mut spec = two_region(WorkloadKind::StreamTriad, 4, 1);
        spec.region_layout.truncate(1);
        let ops: Vec<(u64, OpKind)> = gen_workload(&spec)
            .unwrap()
            .iter()
            .map(|o| (o.address, o.op_kind))
            .collect();
        assert_eq!(
            ops,
            vec![
                (0x1000, OpKind::Load),
                (0x1000, OpKind::Store),
                (0x1008, OpKind::Load),
                (0x1008, OpKind::Store)
            ]
        );
    }

    #[test]
    fn triad_wraps_within_thread_slice() {
        // 0x1000 / 8 = 512 elements, 2 threads -> 256 each, 2 ops per element
        let s = gen_workload(&two_region(WorkloadKind::StreamTriad, 2048, 2)).unwrap();
        let core1: Vec<MemOp> = s.core_ops(1).collect();
        assert_eq!(core1.len(), 1024);
        let slice = s.triad_slice(1, 1);
        assert_eq!(slice, 0x4800..0x5000);
        assert!(core1.iter().all(|o| o.core_id == 1));
        assert_eq!(core1[0].address, 0x4800);
        assert_eq!(core1[512].address, 0x4800);
    }

    #[test]
    fn threads_split_a_gigabyte_evenly() {
        let spec = WorkloadSpec {
            kind: WorkloadKind::StreamTriad,
            total_ops: 8 * 4096,
            threads: 8,
            region_layout: vec![Region::new("a", 0x4000_0000, 1 << 30)],
            load_fraction: 0.5,
            stride_bytes: 8,
            seed: 1,
        };
        let s = gen_workload(&spec).unwrap();
        let per_thread = (1u64 << 30) / 8;
        let mut prev_end = 0x4000_0000;
        for t in 0..8 {
            let slice = s.triad_slice(t, 0);
            assert_eq!(slice.start, prev_end);
            prev_end = slice.end;
            let len = slice.end - slice.start;
            assert!(len.abs_diff(per_thread) <= spec.stride_bytes);
            assert!(s.core_ops(t).all(|o| slice.contains(&o.address)));
        }
        assert_eq!(prev_end, 0x4000_0000 + (1 << 30));
    }

    #[test]
    fn uneven_thread_split() {
        let mut spec = two_region(WorkloadKind::StreamTriad, 10, 3);
        spec.region_layout[0].length_bytes = 8 * 10;
        spec.region_layout[1].length_bytes = 8 * 10;
        let s = gen_workload(&spec).unwrap();
        let lens: Vec<u64> = (0..3)
            .map(|t| s.triad_elements(t).end - s.triad_elements(t).start)
            .collect();
        assert_eq!(lens.iter().sum::<u64>(), 10);
        assert!(lens.iter().max().unwrap() - lens.iter().min().unwrap() <= 1);
        let ops: Vec<u64> = (0..3).map(|t| s.ops_for_core(t)).collect();
        assert_eq!(ops.iter().sum::<u64>(), 10);
        assert_eq!(s.iter().count(), 10);
    }

    #[test]
    fn random_stays_in_regions_and_is_deterministic() {
        let spec = two_region(WorkloadKind::RandomGraph, 5_000, 2);
        let s = gen_workload(&spec).unwrap();
        let a: Vec<MemOp> = s.iter().collect();
        let b: Vec<MemOp> = gen_workload(&spec).unwrap().iter().collect();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5_000);
        for op in &a {
            assert!(spec
                .region_layout
                .iter()
                .any(|r| (r.base_address..r.end()).contains(&op.address)));
            assert_eq!(op.address % 8, 0);
        }
        let loads = a.iter().filter(|o| o.op_kind == OpKind::Load).count();
        assert!((2_300..2_700).contains(&loads), "{loads}");

        let mut other = spec.clone();
        other.seed = 43;
        let c: Vec<MemOp> = gen_workload(&other).unwrap().iter().collect();
        assert_ne!(a, c);
    }

    #[test]
    fn mixed_stream_is_deterministic() {
        let spec = two_region(WorkloadKind::Mixed, 1_000, 1);
        let a: Vec<MemOp> = gen_workload(&spec).unwrap().iter().collect();
        let b: Vec<MemOp> = gen_workload(&spec).unwrap().iter().collect();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_specs() {
        let mut s = two_region(WorkloadKind::StreamTriad, 10, 1);
        s.region_layout.clear();
        assert!(gen_workload(&s).is_err());

        let mut s = two_region(WorkloadKind::StreamTriad, 10, 1);
        s.region_layout[1].base_address = 0x1800;
        assert!(gen_workload(&s).is_err());

        let mut s = two_region(WorkloadKind::StreamTriad, 0, 1);
        assert!(gen_workload(&s).is_err());
        s.total_ops = 1;
        s.threads = 0;
        assert!(gen_workload(&s).is_err());

        let mut s = two_region(WorkloadKind::StreamTriad, 10, 1);
        s.region_layout[0].base_address = 0;
        assert!(gen_workload(&s).is_err());

        let mut s = two_region(WorkloadKind::RandomGraph, 10, 1);
        s.load_fraction = 1.5;
        assert!(gen_workload(&s).is_err());

        let s = two_region(WorkloadKind::StreamTriad, 10, 1024);
        assert!(gen_workload(&s).is_err());
    }
}
