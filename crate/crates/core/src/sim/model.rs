use std::collections::BTreeSet;
use std::ops::{Index, IndexMut};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::codec::{MemoryLevel, OpKind, SampleRecord};
use crate::transport::{BufferConfig, TimescaleParams};

/// One value per memory level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerLevel<T> {
    #[serde(rename = "L1")]
    pub l1: T,
    #[serde(rename = "L2")]
    pub l2: T,
    #[serde(rename = "SLC")]
    pub slc: T,
    #[serde(rename = "DRAM")]
    pub dram: T,
}

impl<T: Copy> PerLevel<T> {
    pub fn values(&self) -> [T; 4] {
        [self.l1, self.l2, self.slc, self.dram]
    }
}

impl<T> Index<MemoryLevel> for PerLevel<T> {
    type Output = T;
    fn index(&self, level: MemoryLevel) -> &T {
        match level {
            MemoryLevel::L1 => &self.l1,
            MemoryLevel::L2 => &self.l2,
            MemoryLevel::Slc => &self.slc,
            MemoryLevel::Dram => &self.dram,
        }
    }
}

impl<T> IndexMut<MemoryLevel> for PerLevel<T> {
    fn index_mut(&mut self, level: MemoryLevel) -> &mut T {
        match level {
            MemoryLevel::L1 => &mut self.l1,
            MemoryLevel::L2 => &mut self.l2,
            MemoryLevel::Slc => &mut self.slc,
            MemoryLevel::Dram => &mut self.dram,
        }
    }
}

/// Probabilistic memory hierarchy: where an access is satisfied and how
/// long it takes. Stateless; no cache contents are modeled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryModel {
    pub level_probabilities: PerLevel<f64>,
    pub level_latency_cycles: PerLevel<u32>,
}

impl Default for MemoryModel {
    fn default() -> Self {
        Self::reference()
    }
}

impl MemoryModel {
    /// Mean latency of exactly 300 cycles, dominated by DRAM misses.
    pub fn reference() -> Self {
        MemoryModel {
            level_probabilities: PerLevel {
                l1: 0.6,
                l2: 0.15,
                slc: 0.05,
                dram: 0.2,
            },
            level_latency_cycles: PerLevel {
                l1: 4,
                l2: 12,
                slc: 36,
                dram: 1470,
            },
        }
    }

    /// Same level mix as [`MemoryModel::reference`] with instantaneous
    /// completion, so the tracking unit is never busy.
    pub fn ideal() -> Self {
        MemoryModel {
            level_latency_cycles: PerLevel {
                l1: 0,
                l2: 0,
                slc: 0,
                dram: 0,
            },
            ..Self::reference()
        }
    }

    pub fn is_ideal(&self) -> bool {
        self.level_latency_cycles.values().iter().all(|&l| l == 0)
    }

    pub fn mean_latency(&self) -> f64 {
        MemoryLevel::ALL
            .iter()
            .map(|&l| self.level_probabilities[l] * f64::from(self.level_latency_cycles[l]))
            .sum()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let probs = self.level_probabilities.values();
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(SimError::InvalidModel(
                "level probabilities must be non-negative".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SimError::InvalidModel(format!(
                "level probabilities sum to {sum}, not 1"
            )));
        }
        let lat = self.level_latency_cycles.values();
        if !self.is_ideal() && !(lat[0] > 0 && lat.windows(2).all(|w| w[0] < w[1])) {
            return Err(SimError::InvalidModel(format!(
                "latencies must be positive and strictly increase L1 < L2 < SLC < DRAM, got {lat:?}"
            )));
        }
        Ok(())
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (MemoryLevel, u32) {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for level in MemoryLevel::ALL {
            acc += self.level_probabilities[level];
            if u < acc {
                return (level, self.level_latency_cycles[level]);
            }
        }
        // Rounding left a sliver above the cumulative sum.
        let last = *MemoryLevel::ALL
            .iter()
            .rev()
            .find(|&&l| self.level_probabilities[l] > 0.0)
            .unwrap_or(&MemoryLevel::Dram);
        (last, self.level_latency_cycles[last])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub op_kinds: BTreeSet<OpKind>,
    pub min_latency: u32,
    pub levels: BTreeSet<MemoryLevel>,
}

impl Default for FilterSpec {
    /// Accepts everything.
    fn default() -> Self {
        FilterSpec {
            op_kinds: OpKind::ALL.into_iter().collect(),
            min_latency: 0,
            levels: MemoryLevel::ALL.into_iter().collect(),
        }
    }
}

impl FilterSpec {
    pub fn kinds(kinds: &[OpKind]) -> Self {
        FilterSpec {
            op_kinds: kinds.iter().copied().collect(),
            ..Default::default()
        }
    }
}

pub fn apply_filter(record: &SampleRecord, filter: &FilterSpec) -> bool {
    filter.op_kinds.contains(&record.op_kind)
        && record.latency_cycles >= filter.min_latency
        && filter.levels.contains(&record.memory_level)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Operations between samples; zero turns sampling off while ground
    /// truth counters keep running.
    pub period: u64,
    /// `None` selects `min(255, period - 1)`.
    pub jitter_max: Option<u64>,
    pub filter: FilterSpec,
    pub buffers: BufferConfig,
    pub interrupt_cost_ops: u64,
    pub per_sample_cost_ops: u64,
    /// Operations between a watermark interrupt and the consumer draining
    /// the buffers. Zero drains inside the interrupt.
    pub drain_latency_ops: u64,
    /// Smaller aux buffers cannot hold a collection window; the sampling
    /// unit then loses every sample.
    pub min_aux_pages: u64,
    pub timescale: TimescaleParams,
    /// Width of the ground-truth access counter bins, in operations.
    pub counter_interval_ops: u64,
    pub track_rss: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            period: 4000,
            jitter_max: None,
            filter: FilterSpec::default(),
            buffers: BufferConfig::default(),
            interrupt_cost_ops: 5000,
            per_sample_cost_ops: 50,
            drain_latency_ops: 0,
            min_aux_pages: 4,
            timescale: TimescaleParams::default(),
            counter_interval_ops: 1_000_000,
            track_rss: false,
        }
    }
}

impl SamplerConfig {
    pub fn with_period(period: u64) -> Self {
        SamplerConfig {
            period,
            ..Default::default()
        }
    }

    pub fn jitter(&self) -> u64 {
        self.jitter_max
            .unwrap_or_else(|| 255.min(self.period.saturating_sub(1)))
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.period > 0 && self.jitter() >= self.period {
            return Err(SimError::InvalidConfig(format!(
                "jitter {} must be smaller than the period {}",
                self.jitter(),
                self.period
            )));
        }
        if self.counter_interval_ops == 0 {
            return Err(SimError::InvalidConfig(
                "counter interval must be positive".into(),
            ));
        }
        self.buffers.validate()?;
        self.timescale.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn record(kind: OpKind, level: MemoryLevel, latency: u32) -> SampleRecord {
        SampleRecord {
            virtual_address: 0x1000,
            timestamp: 1,
            op_kind: kind,
            memory_level: level,
            latency_cycles: latency,
            core_id: 0,
        }
    }

    #[test]
    fn reference_mean_is_300() {
        assert!((MemoryModel::reference().mean_latency() - 300.0).abs() < 1e-9);
        assert_eq!(MemoryModel::ideal().mean_latency(), 0.0);
        MemoryModel::reference().validate().unwrap();
        MemoryModel::ideal().validate().unwrap();
    }

    #[test]
    fn model_validation() {
        let mut m = MemoryModel::reference();
        m.level_probabilities.dram = 0.3;
        assert!(m.validate().is_err());
        let mut m = MemoryModel::reference();
        m.level_latency_cycles.slc = 12;
        assert!(m.validate().is_err());
    }

    #[test]
    fn draws_follow_probabilities() {
        let m = MemoryModel::reference();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let mut counts = PerLevel {
            l1: 0u32,
            l2: 0,
            slc: 0,
            dram: 0,
        };
        for _ in 0..n {
            let (level, lat) = m.draw(&mut rng);
            assert_eq!(lat, m.level_latency_cycles[level]);
            counts[level] += 1;
        }
        for level in MemoryLevel::ALL {
            let p = m.level_probabilities[level];
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((f64::from(counts[level]) - n as f64 * p).abs() < 4.0 * sigma);
        }
    }

    #[test]
    fn filter_semantics() {
        let r = record(OpKind::Load, MemoryLevel::L2, 12);
        assert!(apply_filter(&r, &FilterSpec::default()));
        let none = FilterSpec {
            op_kinds: BTreeSet::new(),
            ..Default::default()
        };
        assert!(!apply_filter(&r, &none));
        assert!(!apply_filter(&r, &FilterSpec::kinds(&[OpKind::Store])));
        let slow = FilterSpec {
            min_latency: 13,
            ..Default::default()
        };
        assert!(!apply_filter(&r, &slow));
        let exact = FilterSpec {
            min_latency: 12,
            ..Default::default()
        };
        assert!(apply_filter(&r, &exact));
        let dram_only = FilterSpec {
            levels: [MemoryLevel::Dram].into_iter().collect(),
            ..Default::default()
        };
        assert!(!apply_filter(&r, &dram_only));
        assert!(apply_filter(
            &record(OpKind::Store, MemoryLevel::Dram, 0),
            &dram_only
        ));
    }

    #[test]
    fn default_jitter() {
        assert_eq!(SamplerConfig::with_period(4000).jitter(), 255);
        assert_eq!(SamplerConfig::with_period(100).jitter(), 99);
        assert_eq!(SamplerConfig::with_period(1).jitter(), 0);
        let mut c = SamplerConfig::with_period(10);
        c.jitter_max = Some(10);
        assert!(c.validate().is_err());
        SamplerConfig::with_period(0).validate().unwrap();
        assert_eq!(SamplerConfig::with_period(0).jitter(), 0);
    }
}
