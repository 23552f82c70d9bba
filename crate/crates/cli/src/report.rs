use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use serde_json::{json, Value};

use nmo_core::analysis::{capacity_from_series, linearity_check, summarize, Knob, SensitivityRow};

use crate::analyze::DEFAULT_CAPACITY_BYTES;
use crate::files::{read_bytes, write_out};
use crate::sweep::SWEEP_HEADER;
use crate::{CliError, CommonOpts};

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Per-run sweep table.
    #[arg(long)]
    pub sweep: Option<PathBuf>,
    /// Resident set timeline.
    #[arg(long)]
    pub capacity: Option<PathBuf>,
    /// Bandwidth timeline.
    #[arg(long)]
    pub bandwidth: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_CAPACITY_BYTES)]
    pub capacity_bytes: u64,
    /// Write the report to this file name inside --out-dir instead of
    /// standard output.
    #[arg(long)]
    pub out: Option<String>,
    #[command(flatten)]
    pub common: CommonOpts,
}

/// Parsed CSV body: one `(line, fields)` per record, fields ordered as
/// `columns`.
fn read_csv(path: &Path, columns: &[&str]) -> Result<Vec<(u64, Vec<String>)>, CliError> {
    let bytes = read_bytes(path)?;
    let bad = |line: u64, msg: String| {
        CliError::config(format!("{}: line {line}: {msg}", path.display()))
    };
    let mut reader = csv::ReaderBuilder::new().from_reader(bytes.as_slice());
    let headers = reader.headers().map_err(|e| bad(1, e.to_string()))?.clone();
    let index: Vec<usize> = columns
        .iter()
        .map(|c| {
            headers
                .iter()
                .position(|h| h == *c)
                .ok_or_else(|| bad(1, format!("missing column {c:?}")))
        })
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            bad(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        rows.push((line, index.iter().map(|&i| record[i].to_owned()).collect()));
    }
    Ok(rows)
}

fn field<T: FromStr>(path: &Path, line: u64, column: &str, text: &str) -> Result<T, CliError> {
    text.parse().map_err(|_| {
        CliError::config(format!(
            "{}: line {line}: invalid {column} {text:?}",
            path.display()
        ))
    })
}

fn sweep_rows(path: &Path) -> Result<Vec<SensitivityRow>, CliError> {
    read_csv(path, &SWEEP_HEADER)?
        .into_iter()
        .map(|(line, f)| {
            let knob: Knob = f[0].parse().map_err(|e: String| {
                CliError::config(format!("{}: line {line}: {e}", path.display()))
            })?;
            Ok(SensitivityRow {
                knob,
                value: field(path, line, "value", &f[1])?,
                seed: field(path, line, "seed", &f[2])?,
                accuracy: field(path, line, "accuracy", &f[3])?,
                overhead: field(path, line, "overhead", &f[4])?,
                collisions: field(path, line, "collisions", &f[5])?,
                delivered: field(path, line, "delivered", &f[6])?,
                interrupts: 0,
            })
        })
        .collect()
}

fn sweep_section(rows: &[SensitivityRow]) -> Result<Value, CliError> {
    let mut flags = Vec::new();
    for r in rows {
        if r.accuracy < 0.0 {
            flags.push(format!(
                "accuracy below zero: {}={} seed={}",
                r.knob, r.value, r.seed
            ));
        }
        if r.overhead < 0.0 {
            flags.push(format!(
                "negative overhead: {}={} seed={}",
                r.knob, r.value, r.seed
            ));
        }
    }
    let mut knobs = BTreeMap::new();
    let mut summaries = summarize(rows);
    summaries.sort_by_key(|s| (s.knob, s.value));
    for knob in [Knob::Period, Knob::AuxPages, Knob::Threads] {
        let of_knob: Vec<SensitivityRow> =
            rows.iter().filter(|r| r.knob == knob).copied().collect();
        if of_knob.is_empty() {
            continue;
        }
        let values: Vec<Value> = summaries
            .iter()
            .filter(|s| s.knob == knob)
            .map(|s| {
                json!({
                    "value": s.value,
                    "runs": s.runs,
                    "accuracy_mean": s.accuracy_mean,
                    "accuracy_stddev": s.accuracy_stddev,
                    "overhead_mean": s.overhead_mean,
                    "overhead_stddev": s.overhead_stddev,
                    "collisions_mean": s.collisions_mean,
                    "collisions_stddev": s.collisions_stddev,
                    "delivered_mean": s.delivered_mean,
                    "delivered_stddev": s.delivered_stddev,
                })
            })
            .collect();
        let linearity = match knob {
            Knob::Period => linearity_check(&of_knob)
                .ok()
                .map(|fit| json!({ "slope": fit.slope, "r2": fit.r2 })),
            _ => None,
        };
        knobs.insert(
            knob.name(),
            json!({ "values": values, "linearity": linearity }),
        );
    }
    Ok(json!({ "rows": rows.len(), "knobs": knobs, "flags": flags }))
}

pub fn run(args: &ReportArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    if args.sweep.is_none() && args.capacity.is_none() && args.bandwidth.is_none() {
        return Err(CliError::config(
            "report needs at least one of --sweep, --capacity, --bandwidth",
        ));
    }
    let mut report = serde_json::Map::new();
    if let Some(path) = &args.sweep {
        report.insert("sweep".into(), sweep_section(&sweep_rows(path)?)?);
    }
    if let Some(path) = &args.capacity {
        let series = read_csv(path, &["t_ns", "bytes"])?
            .into_iter()
            .map(|(line, f)| {
                Ok((
                    field(path, line, "t_ns", &f[0])?,
                    field(path, line, "bytes", &f[1])?,
                ))
            })
            .collect::<Result<Vec<(u64, u64)>, CliError>>()?;
        let cap = capacity_from_series(&series, args.capacity_bytes)?;
        report.insert(
            "capacity".into(),
            json!({
                "points": series.len(),
                "peak_bytes": cap.peak_bytes,
                "total_capacity_bytes": cap.total_capacity_bytes,
                "peak_utilization": cap.peak_utilization,
            }),
        );
    }
    if let Some(path) = &args.bandwidth {
        let values = read_csv(path, &["t_ns", "bytes_per_s"])?
            .into_iter()
            .map(|(line, f)| {
                field::<u64>(path, line, "t_ns", &f[0])?;
                field::<f64>(path, line, "bytes_per_s", &f[1])
            })
            .collect::<Result<Vec<f64>, CliError>>()?;
        let peak = values.iter().copied().fold(0.0, f64::max);
        let mean = if values.is_empty() {
            0.0
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        };
        report.insert(
            "bandwidth".into(),
            json!({ "points": values.len(), "peak_bytes_per_s": peak, "mean_bytes_per_s": mean }),
        );
    }
    let mut text = serde_json::to_vec_pretty(&Value::Object(report)).expect("json value");
    text.push(b'\n');
    match &args.out {
        Some(name) => {
            write_out(&args.common.out_dir, name, &text)?;
        }
        None => stdout
            .write_all(&text)
            .map_err(|e| CliError::io("<stdout>", e))?,
    }
    Ok(())
}
