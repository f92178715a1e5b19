//! CSV / JSON output bundle.
//!
//! | file              | contents                                                        |
//! |-------------------|-----------------------------------------------------------------|
//! | `comparison.csv`  | `seed,scheme,worst_age,node,node_age,out_deg,in_deg,rate`       |
//! | `trace.jsonl`     | one learning iteration per line, tagged with its seed           |
//! | `histogram.csv`   | `bin,lower,upper,uniform_count,optimized_count`                 |
//! | `age_range.csv`   | `seed,uniform_range,optimized_range`                            |
//! | `degree_rate.csv` | `direction,degree,count,mean_rate`                              |
//! | `network.json`    | network of the first successful seed                            |
//! | `summary.json`    | aggregate means, correlations, failures                         |
//! | `sweep.csv`       | `n,lambda_total,capacity,scheme,mean_worst_age,std_error,seeds` |

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::stats::{age_histogram, degree_rate_summary, AgeHistogram, DegreeRateTable};
use super::{ComparisonResult, ExperimentConfig, SeedFailure, Summary, SweepRow};
use crate::bandit::IterationRecord;
use crate::error::Result;

#[derive(Serialize)]
struct ComparisonRow {
    seed: u64,
    scheme: &'static str,
    worst_age: f64,
    node: usize,
    node_age: f64,
    out_deg: usize,
    in_deg: usize,
    rate: f64,
}

#[derive(Serialize)]
struct HistogramRow {
    bin: usize,
    lower: f64,
    upper: f64,
    uniform_count: usize,
    optimized_count: usize,
}

#[derive(Serialize)]
struct DegreeRow {
    direction: &'static str,
    degree: usize,
    count: usize,
    mean_rate: f64,
}

#[derive(Serialize)]
struct TraceLine<'a> {
    seed: u64,
    #[serde(flatten)]
    record: &'a IterationRecord<f64>,
}

#[derive(Serialize)]
struct ExperimentSummary<'a> {
    uniform: Summary,
    optimized: Summary,
    gap: Summary,
    narrower_spread_fraction: f64,
    degree_rate: &'a DegreeRateTable,
    failures: &'a [SeedFailure],
}

fn write_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn comparison_rows(result: &ComparisonResult) -> Vec<ComparisonRow> {
    let mut rows = Vec::new();
    for o in &result.outcomes {
        let out_deg = o.out_degrees();
        let in_deg = o.in_degrees();
        let schemes = [
            ("uniform", o.uniform_worst(), &o.uniform_ages, &o.uniform_allocation),
            ("optimized", o.optimized_worst(), &o.optimized_ages, &o.optimized_allocation),
        ];
        for (scheme, worst_age, ages, rates) in schemes {
            for node in 0..ages.len() {
                rows.push(ComparisonRow {
                    seed: o.seed,
                    scheme,
                    worst_age,
                    node,
                    node_age: ages[node],
                    out_deg: out_deg[node],
                    in_deg: in_deg[node],
                    rate: rates[node],
                });
            }
        }
    }
    rows
}

/// Writes the per-experiment files into `dir`.
pub fn write_experiment(dir: &Path, result: &ComparisonResult, bins: usize) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_csv(&dir.join("comparison.csv"), comparison_rows(result))?;

    let mut trace = BufWriter::new(File::create(dir.join("trace.jsonl"))?);
    for o in &result.outcomes {
        for record in &o.trace.iterations {
            serde_json::to_writer(&mut trace, &TraceLine { seed: o.seed, record })?;
            trace.write_all(b"\n")?;
        }
    }
    trace.flush()?;

    let hist: AgeHistogram = age_histogram(result, bins);
    let hist_rows = (0..hist.uniform_counts.len()).map(|k| HistogramRow {
        bin: k,
        lower: hist.edges[k],
        upper: hist.edges[k + 1],
        uniform_count: hist.uniform_counts[k],
        optimized_count: hist.optimized_counts[k],
    });
    write_csv(&dir.join("histogram.csv"), hist_rows)?;
    write_csv(&dir.join("age_range.csv"), hist.ranges.iter())?;

    let table = degree_rate_summary(result);
    let degree_rows = table
        .by_out_degree
        .iter()
        .map(|b| ("out", b))
        .chain(table.by_in_degree.iter().map(|b| ("in", b)))
        .map(|(direction, b)| DegreeRow { direction, degree: b.degree, count: b.count, mean_rate: b.mean_rate });
    write_csv(&dir.join("degree_rate.csv"), degree_rows)?;

    if let Some(first) = result.outcomes.first() {
        write_json(&dir.join("network.json"), &first.network)?;
    }
    write_json(
        &dir.join("summary.json"),
        &ExperimentSummary {
            uniform: result.uniform_summary(),
            optimized: result.optimized_summary(),
            gap: result.gap_summary(),
            narrower_spread_fraction: hist.narrower_fraction(),
            degree_rate: &table,
            failures: &result.failures,
        },
    )
}

/// Writes one subdirectory `n<size>/` per sweep point plus `sweep.csv`.
pub fn write_sweep(dir: &Path, cfg: &ExperimentConfig, sweep: &[(usize, ComparisonResult)], rows: &[SweepRow]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (n, result) in sweep {
        write_experiment(&dir.join(format!("n{n}")), result, cfg.histogram_bins)?;
    }
    write_csv(&dir.join("sweep.csv"), rows.iter())
}
