use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{compute_accuracy, overhead_from_ops, AccuracyInput, AnalysisError};
use crate::sim::{
    gen_workload, run_sampling, MemoryModel, OpStream, SamplerConfig, SimOutcome, WorkloadSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Knob {
    Period,
    AuxPages,
    Threads,
}

impl Knob {
    pub fn name(self) -> &'static str {
        match self {
            Knob::Period => "period",
            Knob::AuxPages => "aux_pages",
            Knob::Threads => "threads",
        }
    }
}

impl fmt::Display for Knob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Knob {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "period" => Ok(Knob::Period),
            "aux_pages" | "aux" => Ok(Knob::AuxPages),
            "threads" => Ok(Knob::Threads),
            _ => Err(format!(
                "unknown knob {s:?}; expected period, aux_pages or threads"
            )),
        }
    }
}

/// Full simulation setup that a sweep varies one knob of.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepBase {
    pub workload: WorkloadSpec,
    pub sampler: SamplerConfig,
    pub model: MemoryModel,
}

impl SweepBase {
    pub fn with_knob(&self, knob: Knob, value: u64) -> Result<SweepBase, AnalysisError> {
        let mut b = self.clone();
        match knob {
            Knob::Period => b.sampler.period = value,
            Knob::AuxPages => b.sampler.buffers.aux_pages = value,
            Knob::Threads => {
                b.workload.threads = u32::try_from(value).map_err(|_| {
                    AnalysisError::InvalidInput(format!("thread count {value} out of range"))
                })?
            }
        }
        if b.sampler.period == 0 {
            return Err(AnalysisError::InvalidInput(
                "period must be positive".into(),
            ));
        }
        b.sampler.validate()?;
        if b.sampler.buffers.aux_pages == 0 || b.sampler.buffers.ring_pages == 0 {
            return Err(AnalysisError::InvalidInput(
                "buffers need at least one page".into(),
            ));
        }
        Ok(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub knob: Knob,
    pub value: u64,
    pub seed: u64,
    pub accuracy: f64,
    pub overhead: f64,
    pub collisions: u64,
    pub delivered: u64,
    #[serde(default)]
    pub interrupts: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub knob: Knob,
    pub value: u64,
    pub runs: usize,
    pub accuracy_mean: f64,
    pub accuracy_stddev: f64,
    pub overhead_mean: f64,
    pub overhead_stddev: f64,
    pub collisions_mean: f64,
    pub collisions_stddev: f64,
    pub delivered_mean: f64,
    pub delivered_stddev: f64,
    pub interrupts_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    /// One row per `(value, seed)`, values in input order, seeds inner.
    pub rows: Vec<SensitivityRow>,
    pub summaries: Vec<SweepSummary>,
}

impl SweepTable {
    pub fn summary(&self, value: u64) -> Option<&SweepSummary> {
        self.summaries.iter().find(|s| s.value == value)
    }
}

/// Mean and sample standard deviation; the deviation of fewer than two
/// values is zero.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Ground truth for the operation kinds the filter lets through.
fn mem_counted(outcome: &SimOutcome, config: &SamplerConfig) -> u64 {
    config
        .filter
        .op_kinds
        .iter()
        .map(|&k| outcome.total.ground_truth_by_kind.get(k))
        .sum()
}

fn row(
    knob: Knob,
    value: u64,
    seed: u64,
    base: &SweepBase,
    stream: &OpStream,
) -> Result<SensitivityRow, AnalysisError> {
    let run = run_sampling(stream, &base.sampler, &base.model, seed)?;
    let o = &run.outcome;
    let accuracy = compute_accuracy(AccuracyInput {
        mem_counted: mem_counted(o, &base.sampler),
        samples: o.total.delivered,
        period: base.sampler.period,
    })?;
    Ok(SensitivityRow {
        knob,
        value,
        seed,
        accuracy,
        overhead: overhead_from_ops(o.total.instrumented_time_ops, o.total.baseline_time_ops)?,
        collisions: o.total.collided,
        delivered: o.total.delivered,
        interrupts: o.total.interrupts,
    })
}

/// Runs every `(value, seed)` pair in parallel. The sampler seed varies;
/// the workload keeps its own seed so every run sees the same operations.
pub fn run_sweep(
    knob: Knob,
    values: &[u64],
    base: &SweepBase,
    seeds: &[u64],
) -> Result<SweepTable, AnalysisError> {
    if values.is_empty() {
        return Err(AnalysisError::InvalidInput("no knob values given".into()));
    }
    if seeds.is_empty() {
        return Err(AnalysisError::InvalidInput("no seeds given".into()));
    }
    let points = values
        .iter()
        .map(|&v| {
            let b = base.with_knob(knob, v)?;
            let stream = gen_workload(&b.workload)?;
            Ok((v, b, stream))
        })
        .collect::<Result<Vec<_>, AnalysisError>>()?;

    let jobs: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let (v, b, stream) = &points[i];
            row(knob, *v, seed, b, stream)
        })
        .collect::<Result<Vec<_>, AnalysisError>>()?;
    let summaries = summarize(&rows);
    Ok(SweepTable { rows, summaries })
}

/// Per-`(knob, value)` statistics in first-appearance order.
pub fn summarize(rows: &[SensitivityRow]) -> Vec<SweepSummary> {
    let mut keys: Vec<(Knob, u64)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.knob, r.value)) {
            keys.push((r.knob, r.value));
        }
    }
    keys.into_iter()
        .map(|(knob, value)| {
            let group: Vec<&SensitivityRow> = rows
                .iter()
                .filter(|r| r.knob == knob && r.value == value)
                .collect();
            let col = |f: fn(&SensitivityRow) -> f64| {
                mean_std(&group.iter().map(|r| f(r)).collect::<Vec<_>>())
            };
            let (accuracy_mean, accuracy_stddev) = col(|r| r.accuracy);
            let (overhead_mean, overhead_stddev) = col(|r| r.overhead);
            let (collisions_mean, collisions_stddev) = col(|r| r.collisions as f64);
            let (delivered_mean, delivered_stddev) = col(|r| r.delivered as f64);
            SweepSummary {
                knob,
                value,
                runs: group.len(),
                accuracy_mean,
                accuracy_stddev,
                overhead_mean,
                overhead_stddev,
                collisions_mean,
                collisions_stddev,
                delivered_mean,
                delivered_stddev,
                interrupts_mean: col(|r| r.interrupts as f64).0,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub r2: f64,
}

/// Least-squares fit of `delivered = slope / period` through the origin.
/// `r2` is measured against the mean of `delivered`.
pub fn linearity_check(rows: &[SensitivityRow]) -> Result<LinearFit, AnalysisError> {
    if let Some(r) = rows.iter().find(|r| r.knob != Knob::Period) {
        return Err(AnalysisError::InvalidInput(format!(
            "linearity needs period rows, got {}",
            r.knob
        )));
    }
    let mut periods: Vec<u64> = rows.iter().map(|r| r.value).collect();
    periods.sort_unstable();
    periods.dedup();
    if periods.len() < 3 {
        return Err(AnalysisError::InvalidInput(format!(
            "linearity needs at least 3 distinct periods, got {}",
            periods.len()
        )));
    }
    if periods[0] == 0 {
        return Err(AnalysisError::InvalidInput("period 0 in table".into()));
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (1.0 / r.value as f64, r.delivered as f64))
        .collect();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let slope = sxy / sxx;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let ss_res: f64 = pts.iter().map(|p| (p.1 - slope * p.0).powi(2)).sum();
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        1.0
    } else {
        0.0
    };
    Ok(LinearFit { slope, r2 })
}

/// Ready-made sweep setups at desk scale.
pub mod presets {
    use super::SweepBase;
    use crate::sim::{MemoryModel, SamplerConfig, WorkloadSpec};
    use crate::transport::BufferConfig;

    pub const TRIAD_OPS: u64 = 10_000_000;
    const TRIAD_ARRAY_BYTES: u64 = 1 << 26;

    /// Collision-free triad: delivered samples track ground truth.
    pub fn unbiasedness() -> SweepBase {
        SweepBase {
            workload: WorkloadSpec::stream_triad(TRIAD_OPS, 1, TRIAD_ARRAY_BYTES),
            sampler: SamplerConfig::with_period(4000),
            model: MemoryModel::ideal(),
        }
    }

    /// Triad under the reference latency model, where short periods
    /// select operations while the previous sample is still in flight.
    pub fn collisions() -> SweepBase {
        SweepBase {
            model: MemoryModel::reference(),
            ..unbiasedness()
        }
    }

    /// Small pages and a slow consumer, so the aux size decides how many
    /// samples survive: 16 aux pages, watermark at half.
    pub fn aux_buffer() -> SweepBase {
        let mut sampler = SamplerConfig::with_period(1000);
        sampler.buffers = BufferConfig::new(8, 16).with_page_size(4096);
        sampler.drain_latency_ops = 590_000;
        SweepBase {
            workload: WorkloadSpec::stream_triad(TRIAD_OPS, 1, TRIAD_ARRAY_BYTES),
            sampler,
            model: MemoryModel::ideal(),
        }
    }

    /// Aux-buffer setup with the reference latency model, for varying the
    /// thread count.
    pub fn threads() -> SweepBase {
        SweepBase {
            model: MemoryModel::reference(),
            ..aux_buffer()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth(period: u64, delivered: u64) -> SensitivityRow {
        SensitivityRow {
            knob: Knob::Period,
            value: period,
            seed: 0,
            accuracy: 1.0,
            overhead: 0.0,
            collisions: 0,
            delivered,
            interrupts: 0,
        }
    }

    #[test]
    fn perfect_rows_fit_exactly() {
        let n = 12_000_000u64;
        let rows: Vec<_> = [1000, 2000, 3000, 4000, 6000]
            .iter()
            .map(|&p| synth(p, n / p))
            .collect();
        let fit = linearity_check(&rows).unwrap();
        assert!((fit.slope - n as f64).abs() / (n as f64) < 1e-12);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_tables() {
        assert!(linearity_check(&[synth(10, 1), synth(10, 2), synth(10, 3)]).is_err());
        assert!(linearity_check(&[synth(10, 1), synth(20, 2)]).is_err());
    }

    #[test]
    fn mean_and_sample_stddev() {
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, 5.0);
        assert!((s - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
    }

    #[test]
    fn knob_names() {
        for k in [Knob::Period, Knob::AuxPages, Knob::Threads] {
            assert_eq!(k.name().parse::<Knob>().unwrap(), k);
        }
        assert!("ring".parse::<Knob>().is_err());
    }

    #[test]
    fn invalid_knob_values() {
        let base = presets::unbiasedness();
        assert!(base.with_knob(Knob::Period, 0).is_err());
        assert!(base.with_knob(Knob::AuxPages, 0).is_err());
        assert!(run_sweep(Knob::Period, &[], &base, &[1]).is_err());
        assert!(run_sweep(Knob::Period, &[1000], &base, &[]).is_err());
    }
}
