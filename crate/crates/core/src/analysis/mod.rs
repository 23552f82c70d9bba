//! Accuracy and overhead metrics, capacity and bandwidth series, region
//! profiles, and sensitivity sweeps.

mod regions;
mod sweep;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profiler::NormalizedTrace;
use crate::sim::SimError;

pub use regions::{region_profile, RegionProfile, RegionStats, ScatterPoint, UNTAGGED};
pub use sweep::{
    linearity_check, mean_std, presets, run_sweep, summarize, Knob, LinearFit, SensitivityRow,
    SweepBase, SweepSummary, SweepTable,
};

/// Bytes moved per counted bus access: one cache line.
pub const DEFAULT_BYTES_PER_EVENT: u64 = 64;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unknown phase {0:?}")]
    UnknownPhase(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// `num / den` rounded to nearest, ties to even.
pub fn exact_ratio(num: u128, den: u128) -> f64 {
    assert!(den != 0, "zero denominator");
    if num == 0 {
        return 0.0;
    }
    // Align both leading bits at position 127, so the quotient of the
    // aligned values lies in (1/2, 2).
    let (ln, ld) = (num.leading_zeros() as i32, den.leading_zeros() as i32);
    let (n, d) = (num << ln, den << ld);
    let mut q: u64 = u64::from(n >= d);
    let mut r = if n >= d { n - d } else { n };
    let mut steps = 0i32;
    while q < 1 << 54 {
        let carry = r >> 127 == 1;
        r <<= 1;
        q <<= 1;
        if carry || r >= d {
            r = r.wrapping_sub(d);
            q |= 1;
        }
        steps += 1;
    }
    // q holds 55 significant bits: 53 for the mantissa plus guard and round.
    let sticky = r != 0;
    let mut mant = q >> 2;
    let guard = q & 2 != 0;
    let rest = q & 1 != 0 || sticky;
    if guard && (rest || mant & 1 == 1) {
        mant += 1;
    }
    let exp = 2 - steps + ld - ln;
    mant as f64 * 2f64.powi(exp)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccuracyInput {
    /// Memory operations counted by the ground-truth event.
    pub mem_counted: u64,
    /// Samples that reached the consumer.
    pub samples: u64,
    pub period: u64,
}

/// `1 - |mem_counted - samples * period| / mem_counted`, unclamped. Values
/// below zero mean the samples overstate the counted operations twofold.
pub fn compute_accuracy(input: AccuracyInput) -> Result<f64, AnalysisError> {
    let m = u128::from(input.mem_counted);
    if m == 0 {
        return Err(AnalysisError::InvalidInput(
            "mem_counted must be positive".into(),
        ));
    }
    if input.period == 0 {
        return Err(AnalysisError::InvalidInput(
            "period must be positive".into(),
        ));
    }
    let estimate = u128::from(input.samples) * u128::from(input.period);
    let diff = m.abs_diff(estimate);
    Ok(if diff <= m {
        exact_ratio(m - diff, m)
    } else {
        -exact_ratio(diff - m, m)
    })
}

/// Relative slowdown of the instrumented run; negative values are kept.
pub fn compute_overhead(t_instrumented: f64, t_baseline: f64) -> Result<f64, AnalysisError> {
    if !(t_baseline > 0.0 && t_baseline.is_finite()) || !t_instrumented.is_finite() {
        return Err(AnalysisError::InvalidInput(format!(
            "baseline time must be positive and finite, got {t_baseline}"
        )));
    }
    Ok((t_instrumented - t_baseline) / t_baseline)
}

/// Overhead for integer durations, exact to rounding.
pub fn overhead_from_ops(t_instrumented: u64, t_baseline: u64) -> Result<f64, AnalysisError> {
    if t_baseline == 0 {
        return Err(AnalysisError::InvalidInput(
            "baseline time must be positive".into(),
        ));
    }
    let (i, b) = (u128::from(t_instrumented), u128::from(t_baseline));
    Ok(if i >= b {
        exact_ratio(i - b, b)
    } else {
        -exact_ratio(b - i, b)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthPoint {
    pub t_ns: u64,
    pub bytes_per_second: f64,
}

/// Converts per-interval event counts to bytes per second.
pub fn bandwidth_series(
    event_counts: &[(u64, u64)],
    interval_ns: u64,
    bytes_per_event: u64,
) -> Result<Vec<BandwidthPoint>, AnalysisError> {
    if interval_ns == 0 {
        return Err(AnalysisError::InvalidInput(
            "interval must be positive".into(),
        ));
    }
    Ok(event_counts
        .iter()
        .map(|&(t_ns, count)| BandwidthPoint {
            t_ns,
            bytes_per_second: exact_ratio(
                u128::from(count) * u128::from(bytes_per_event) * 1_000_000_000,
                u128::from(interval_ns),
            ),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityReport {
    pub series: Vec<(u64, u64)>,
    pub peak_bytes: u64,
    pub total_capacity_bytes: u64,
    /// `peak_bytes / total_capacity_bytes`, as a fraction.
    pub peak_utilization: f64,
}

pub fn capacity_series(
    trace: &NormalizedTrace,
    total_capacity_bytes: u64,
) -> Result<CapacityReport, AnalysisError> {
    capacity_from_series(&trace.rss_series, total_capacity_bytes)
}

pub fn capacity_from_series(
    series: &[(u64, u64)],
    total_capacity_bytes: u64,
) -> Result<CapacityReport, AnalysisError> {
    if total_capacity_bytes == 0 {
        return Err(AnalysisError::InvalidInput(
            "total capacity must be positive".into(),
        ));
    }
    let peak_bytes = series.iter().map(|p| p.1).max().unwrap_or(0);
    Ok(CapacityReport {
        series: series.to_vec(),
        peak_bytes,
        total_capacity_bytes,
        peak_utilization: exact_ratio(u128::from(peak_bytes), u128::from(total_capacity_bytes)),
    })
}
