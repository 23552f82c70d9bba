//! The sampling pipeline, one simulated core at a time.
//!
//! For every operation the interval counter is decremented. When it reaches
//! zero the operation is selected and the counter is reloaded. A selected
//! operation collides, and is discarded unfiltered, if the tracking unit is
//! still busy with the previous tracked operation. Otherwise its level and
//! latency are drawn, the tracking unit stays busy for that many operations,
//! and the filter decides whether the packet goes to the aux buffer.
//!
//! The counter starts at `period + U[0, jitter]` and is reloaded with
//! `period - jitter/2 + U[0, jitter]`, so the mean interval stays at the
//! period.
//!
//! Packets accumulate until the aux fill reaches the watermark. The crossing
//! raises an interrupt; the consumer drains `drain_latency_ops` operations
//! later. Packets that find no aux space are truncated.

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{apply_filter, MemoryModel, SamplerConfig};
use super::workload::OpStream;
use super::SimError;
use crate::codec::{encode_record, OpKind, SampleRecord, PACKET_SIZE};
use crate::transport::{
    convert_timestamp, AppendOutcome, AuxChunk, AuxFlags, BufferPair, CoreTrace, TimescaleParams,
    TraceFile,
};

const RSS_PAGE_SHIFT: u32 = 12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindCounts {
    pub load: u64,
    pub store: u64,
}

impl KindCounts {
    pub fn get(&self, kind: OpKind) -> u64 {
        match kind {
            OpKind::Load => self.load,
            OpKind::Store => self.store,
        }
    }
}

/// Ground truth and loss accounting for one core or a whole run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleAccounting {
    pub ground_truth_ops: u64,
    pub ground_truth_by_kind: KindCounts,
    pub selected: u64,
    pub collided: u64,
    pub filtered_out: u64,
    pub delivered: u64,
    pub truncated_dropped: u64,
    pub interrupts: u64,
    pub baseline_time_ops: u64,
    pub instrumented_time_ops: u64,
}

impl SampleAccounting {
    /// `selected == collided + filtered_out + delivered + truncated_dropped`
    pub fn is_balanced(&self) -> bool {
        self.selected == self.collided + self.filtered_out + self.delivered + self.truncated_dropped
    }

    fn add(&mut self, o: &SampleAccounting) {
        self.ground_truth_ops += o.ground_truth_ops;
        self.ground_truth_by_kind.load += o.ground_truth_by_kind.load;
        self.ground_truth_by_kind.store += o.ground_truth_by_kind.store;
        self.selected += o.selected;
        self.collided += o.collided;
        self.filtered_out += o.filtered_out;
        self.delivered += o.delivered;
        self.truncated_dropped += o.truncated_dropped;
        self.interrupts += o.interrupts;
        self.baseline_time_ops += o.baseline_time_ops;
        self.instrumented_time_ops += o.instrumented_time_ops;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimOutcome {
    #[serde(flatten)]
    pub total: SampleAccounting,
    pub per_core: Vec<SampleAccounting>,
}

/// Everything one simulated core produced.
pub struct CoreCapture {
    pub core_id: u16,
    pub accounting: SampleAccounting,
    /// The core's buffers after the final drain.
    pub buffers: BufferPair,
    pub trace: CoreTrace,
    /// Ground-truth memory operations per counter bin.
    pub access_bins: Vec<u64>,
    /// `(page, bin)` of each page's first touch on this core.
    first_touch: Vec<(u64, u64)>,
}

pub struct SimRun {
    pub outcome: SimOutcome,
    pub cores: Vec<CoreCapture>,
    config: SamplerConfig,
}

impl SimRun {
    pub fn trace_file(&self) -> TraceFile {
        TraceFile {
            page_size: self.config.buffers.page_size_bytes as u32,
            cores: self.cores.iter().map(|c| c.trace.clone()).collect(),
        }
    }

    pub fn timescale(&self) -> TimescaleParams {
        self.config.timescale
    }

    fn bin_start_ns(&self, bin: u64) -> u64 {
        convert_timestamp(
            bin * self.config.counter_interval_ops,
            &self.config.timescale,
        )
    }

    pub fn counter_interval_ns(&self) -> u64 {
        self.bin_start_ns(1) - self.bin_start_ns(0)
    }

    /// Memory operations per counter bin, summed over cores, stamped with
    /// the bin start.
    pub fn mem_access_series(&self) -> Vec<(u64, u64)> {
        let bins = self
            .cores
            .iter()
            .map(|c| c.access_bins.len())
            .max()
            .unwrap_or(0);
        (0..bins)
            .map(|b| {
                let count = self.cores.iter().filter_map(|c| c.access_bins.get(b)).sum();
                (self.bin_start_ns(b as u64), count)
            })
            .collect()
    }

    /// Resident bytes (4 KiB pages touched by any core) at the end of each
    /// counter bin. Empty unless RSS tracking was enabled.
    pub fn rss_series(&self) -> Vec<(u64, u64)> {
        if !self.config.track_rss {
            return Vec::new();
        }
        let mut first: BTreeMap<u64, u64> = BTreeMap::new();
        for core in &self.cores {
            for &(page, bin) in &core.first_touch {
                first
                    .entry(page)
                    .and_modify(|b| *b = (*b).min(bin))
                    .or_insert(bin);
            }
        }
        let bins = self
            .cores
            .iter()
            .map(|c| c.access_bins.len())
            .max()
            .unwrap_or(0);
        let mut new_pages = vec![0u64; bins];
        for bin in first.values() {
            new_pages[*bin as usize] += 1;
        }
        new_pages
            .iter()
            .enumerate()
            .scan(0u64, |resident, (b, n)| {
                *resident += n << RSS_PAGE_SHIFT;
                Some((self.bin_start_ns(b as u64 + 1), *resident))
            })
            .collect()
    }
}

struct CoreSim<'a> {
    config: &'a SamplerConfig,
    buffers: BufferPair,
    pending: Vec<u8>,
    collision_seen: bool,
    drain_at: Option<u64>,
    acct: SampleAccounting,
    trace: CoreTrace,
}

impl CoreSim<'_> {
    /// Appends pending packets; returns whether the watermark was crossed.
    fn flush(&mut self) -> bool {
        if self.pending.is_empty() {
            return false;
        }
        let flags = if self.collision_seen {
            AuxFlags::COLLISION
        } else {
            AuxFlags::empty()
        };
        let packets = (self.pending.len() / PACKET_SIZE) as u64;
        let outcome = self
            .buffers
            .producer_append(&self.pending, flags)
            .expect("pending holds whole packets");
        self.pending.clear();
        match outcome {
            AppendOutcome::Written {
                watermark_crossed, ..
            } => {
                self.acct.delivered += packets;
                self.collision_seen = false;
                watermark_crossed
            }
            AppendOutcome::Truncated { .. } => {
                self.acct.truncated_dropped += packets;
                false
            }
        }
    }

    /// Returns whether any bytes were handed to the consumer.
    fn drain(&mut self) -> bool {
        self.flush();
        let drained = self.buffers.consumer_drain();
        let any = drained.total_bytes() > 0;
        self.trace.chunks.extend(
            drained
                .records
                .into_iter()
                .zip(drained.payloads)
                .map(|(record, payload)| AuxChunk { record, payload }),
        );
        any
    }

    fn interrupt(&mut self) {
        self.drain();
        self.acct.interrupts += 1;
        self.drain_at = None;
    }

    fn deliver(&mut self, packet: &[u8], now: u64) {
        let free = self.buffers.aux_free() - self.pending.len() as u64;
        if free < PACKET_SIZE as u64 {
            self.flush();
            match self.buffers.producer_append(packet, AuxFlags::empty()) {
                Ok(AppendOutcome::Truncated { .. }) => self.acct.truncated_dropped += 1,
                Ok(AppendOutcome::Written { .. }) => self.acct.delivered += 1,
                Err(e) => unreachable!("single packet append: {e}"),
            }
            return;
        }
        self.pending.extend_from_slice(packet);
        let fill = self.buffers.aux_fill() + self.pending.len() as u64;
        if self.drain_at.is_none() && fill >= self.config.buffers.watermark() && self.flush() {
            if self.config.drain_latency_ops == 0 {
                self.interrupt();
            } else {
                self.drain_at = Some(now + self.config.drain_latency_ops);
            }
        }
    }
}

fn simulate_core(
    stream: &OpStream,
    core: u32,
    config: &SamplerConfig,
    model: &MemoryModel,
    rng_seed: u64,
) -> Result<CoreCapture, SimError> {
    let core_id = core as u16;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    rng.set_stream(u64::from(core));
    let period = config.period;
    let jitter = config.jitter();
    let reload_base = period.saturating_sub(jitter / 2);
    let operable = config.buffers.aux_pages >= config.min_aux_pages;
    let interval = config.counter_interval_ops;

    let mut sim = CoreSim {
        config,
        buffers: BufferPair::create(config.buffers, config.timescale)?,
        pending: Vec::new(),
        collision_seen: false,
        drain_at: None,
        acct: SampleAccounting::default(),
        trace: CoreTrace {
            core_id,
            chunks: Vec::new(),
        },
    };
    let mut access_bins = Vec::new();
    let mut touched = HashSet::new();
    let mut first_touch = Vec::new();

    let mut counter = period + rng.gen_range(0..=jitter);
    let mut busy_until = 0u64;

    for (i, op) in stream.core_ops(core).enumerate() {
        // Timestamps are 1-based operation indices; zero is never valid.
        let now = i as u64 + 1;
        if sim.drain_at.is_some_and(|t| now >= t) {
            sim.interrupt();
        }

        sim.acct.ground_truth_ops += 1;
        match op.op_kind {
            OpKind::Load => sim.acct.ground_truth_by_kind.load += 1,
            OpKind::Store => sim.acct.ground_truth_by_kind.store += 1,
        }
        let bin = (i as u64 / interval) as usize;
        if bin == access_bins.len() {
            access_bins.push(0);
        }
        access_bins[bin] += 1;
        if config.track_rss {
            let page = op.address >> RSS_PAGE_SHIFT;
            if touched.insert(page) {
                first_touch.push((page, bin as u64));
            }
        }

        if period == 0 {
            continue;
        }
        counter -= 1;
        if counter > 0 {
            continue;
        }
        counter = reload_base + rng.gen_range(0..=jitter);
        sim.acct.selected += 1;

        if now < busy_until {
            sim.acct.collided += 1;
            sim.collision_seen = true;
            continue;
        }
        let (memory_level, latency_cycles) = model.draw(&mut rng);
        busy_until = now + u64::from(latency_cycles);
        let record = SampleRecord {
            virtual_address: op.address,
            timestamp: now,
            op_kind: op.op_kind,
            memory_level,
            latency_cycles,
            core_id,
        };
        if !apply_filter(&record, &config.filter) {
            sim.acct.filtered_out += 1;
            continue;
        }
        if !operable {
            sim.acct.truncated_dropped += 1;
            continue;
        }
        sim.deliver(encode_record(&record).as_bytes(), now);
    }

    // Session teardown: whatever is left is handed over in one last drain.
    if sim.drain() {
        sim.acct.interrupts += 1;
    }

    let acct = &mut sim.acct;
    acct.baseline_time_ops = acct.ground_truth_ops;
    acct.instrumented_time_ops = acct.ground_truth_ops
        + acct.interrupts * config.interrupt_cost_ops
        + acct.delivered * config.per_sample_cost_ops;

    Ok(CoreCapture {
        core_id,
        accounting: sim.acct,
        buffers: sim.buffers,
        trace: sim.trace,
        access_bins,
        first_touch,
    })
}

pub fn run_sampling(
    stream: &OpStream,
    config: &SamplerConfig,
    model: &MemoryModel,
    rng_seed: u64,
) -> Result<SimRun, SimError> {
    config.validate()?;
    model.validate()?;
    let results: Vec<Result<CoreCapture, SimError>> = (0..stream.threads())
        .into_par_iter()
        .map(|core| simulate_core(stream, core, config, model, rng_seed))
        .collect();

    let mut cores = Vec::with_capacity(results.len());
    let mut total = SampleAccounting::default();
    for r in results {
        let capture = r?;
        total.add(&capture.accounting);
        cores.push(capture);
    }
    let per_core = cores.iter().map(|c| c.accounting).collect();
    Ok(SimRun {
        outcome: SimOutcome { total, per_core },
        cores,
        config: config.clone(),
    })
}
