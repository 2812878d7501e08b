//! Percentile summaries, cross-corpus comparisons and report emission.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::record::ProbeResult;

/// Percentiles reported by every comparison table.
pub const STANDARD_POINTS: [f64; 5] = [10.0, 25.0, 50.0, 75.0, 90.0];

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("cannot summarize an empty series")]
    EmptySeries,
    #[error("series contains a non-finite value at index {0}")]
    NonFinite(usize),
    #[error("percentile point {0} outside (0, 100)")]
    BadPoint(f64),
    #[error("corpus {0} has no usable sites")]
    EmptyCorpus(&'static str),
    #[error("nothing to report")]
    NothingToReport,
    #[error("cannot write report to {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentileTable {
    pub metric: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    /// `(p, value)` pairs in ascending `p`.
    pub points: Vec<(f64, f64)>,
}

impl PercentileTable {
    pub fn value_at(&self, p: f64) -> Option<f64> {
        self.points.iter().find(|(q, _)| *q == p).map(|(_, v)| *v)
    }

    pub fn median(&self) -> Option<f64> {
        self.value_at(50.0)
    }

    pub fn with_group(mut self, group: impl Into<String>) -> Self {
        self.group = Some(group.into());
        self
    }
}

/// Linear-interpolation percentiles: rank `p/100 * (n-1)` over the zero-indexed
/// order statistics.
pub fn percentiles(
    metric: impl Into<String>,
    series: &[f64],
    points: &[f64],
) -> Result<PercentileTable, StatsError> {
    if series.is_empty() {
        return Err(StatsError::EmptySeries);
    }
    if let Some(i) = series.iter().position(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite(i));
    }
    let mut ps: Vec<f64> = points.to_vec();
    if let Some(&bad) = ps.iter().find(|p| !(**p > 0.0 && **p < 100.0)) {
        return Err(StatsError::BadPoint(bad));
    }
    ps.sort_by(f64::total_cmp);

    let mut work = series.to_vec();
    let n = work.len();
    let points = ps
        .into_iter()
        .map(|p| {
            let rank = p / 100.0 * (n - 1) as f64;
            let lo = rank.floor() as usize;
            let frac = rank - lo as f64;
            let (_, lo_val, upper) = work.select_nth_unstable_by(lo, f64::total_cmp);
            let lo_val = *lo_val;
            let value = if frac > 0.0 && !upper.is_empty() {
                let hi_val = upper.iter().copied().min_by(f64::total_cmp).unwrap_or(lo_val);
                lo_val + frac * (hi_val - lo_val)
            } else {
                lo_val
            };
            (p, value)
        })
        .collect();
    Ok(PercentileTable {
        metric: metric.into(),
        group: None,
        points,
    })
}

/// Shorthand for the 10/25/50/75/90 table.
pub fn standard_percentiles(
    metric: impl Into<String>,
    series: &[f64],
) -> Result<PercentileTable, StatsError> {
    percentiles(metric, series, &STANDARD_POINTS)
}

pub fn median(series: &[f64]) -> Result<f64, StatsError> {
    Ok(percentiles("median", series, &[50.0])?.points[0].1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub group_a: f64,
    pub group_b: f64,
    /// `group_b / group_a`; absent when `group_a` is not positive.
    pub ratio: Option<f64>,
}

impl ComparisonRow {
    pub fn new(metric: impl Into<String>, group_a: f64, group_b: f64) -> Self {
        Self {
            metric: metric.into(),
            group_a,
            group_b,
            ratio: (group_a > 0.0).then(|| group_b / group_a),
        }
    }
}

/// Median across sites of a per-site value, for two corpora.
///
/// `extract` reduces one probe to a single number (typically the mean of a
/// monitor channel); probes for which it returns `None` are skipped.
pub fn compare_corpora<F>(
    metric: impl Into<String>,
    a: &[ProbeResult],
    b: &[ProbeResult],
    extract: F,
) -> Result<ComparisonRow, StatsError>
where
    F: Fn(&ProbeResult) -> Option<f64>,
{
    let a_vals: Vec<f64> = a.iter().filter_map(&extract).collect();
    let b_vals: Vec<f64> = b.iter().filter_map(&extract).collect();
    if a_vals.is_empty() {
        return Err(StatsError::EmptyCorpus("a"));
    }
    if b_vals.is_empty() {
        return Err(StatsError::EmptyCorpus("b"));
    }
    Ok(ComparisonRow::new(metric, median(&a_vals)?, median(&b_vals)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

/// Renders `x` with four significant digits.
pub fn format_sig4(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "NaN".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    // round first so that 9.9996 becomes 10.00, not 9.9996 with 4 decimals
    let rounded: f64 = format!("{x:.3e}").parse().unwrap_or(x);
    let exp = rounded.abs().log10().floor() as i32;
    if (-4..7).contains(&exp) {
        let decimals = (3 - exp).max(0) as usize;
        format!("{rounded:.decimals$}")
    } else {
        format!("{x:.3e}")
    }
}

fn round_sig4(x: f64) -> f64 {
    if x.is_finite() {
        format!("{x:.3e}").parse().unwrap_or(x)
    } else {
        x
    }
}

fn percentile_header(tables: &[PercentileTable]) -> Vec<f64> {
    let mut points: Vec<f64> = tables
        .iter()
        .flat_map(|t| t.points.iter().map(|(p, _)| *p))
        .collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    points
}

fn p_label(p: f64) -> String {
    if p.fract() == 0.0 {
        format!("p{}", p as i64)
    } else {
        format!("p{p}")
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes percentile tables and comparison rows under `dir`.
///
/// CSV output is `percentiles.csv` (`metric,group,p10,...`) and
/// `comparisons.csv` (`metric,group_a,group_b,ratio`); JSON output is a single
/// `report.json`. Output depends only on the inputs, so re-running on the
/// same data produces identical bytes.
pub fn emit_report(
    dir: &Path,
    tables: &[PercentileTable],
    rows: &[ComparisonRow],
    format: ReportFormat,
) -> Result<Vec<PathBuf>, StatsError> {
    if tables.is_empty() && rows.is_empty() {
        return Err(StatsError::NothingToReport);
    }
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| StatsError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    match format {
        ReportFormat::Csv => {
            if !tables.is_empty() {
                let points = percentile_header(tables);
                let mut out = String::from("metric,group");
                for p in &points {
                    let _ = write!(out, ",{}", p_label(*p));
                }
                out.push('\n');
                for t in tables {
                    out.push_str(&csv_field(&t.metric));
                    out.push(',');
                    out.push_str(&csv_field(t.group.as_deref().unwrap_or("")));
                    for p in &points {
                        out.push(',');
                        if let Some(v) = t.value_at(*p) {
                            out.push_str(&format_sig4(v));
                        }
                    }
                    out.push('\n');
                }
                let path = dir.join("percentiles.csv");
                fs::write(&path, out).map_err(io_err(&path))?;
                written.push(path);
            }
            if !rows.is_empty() {
                let mut out = String::from("metric,group_a,group_b,ratio\n");
                for r in rows {
                    let _ = writeln!(
                        out,
                        "{},{},{},{}",
                        csv_field(&r.metric),
                        format_sig4(r.group_a),
                        format_sig4(r.group_b),
                        r.ratio.map(format_sig4).unwrap_or_default()
                    );
                }
                let path = dir.join("comparisons.csv");
                fs::write(&path, out).map_err(io_err(&path))?;
                written.push(path);
            }
        }
        ReportFormat::Json => {
            let tables: Vec<PercentileTable> = tables
                .iter()
                .map(|t| PercentileTable {
                    points: t.points.iter().map(|(p, v)| (*p, round_sig4(*v))).collect(),
                    ..t.clone()
                })
                .collect();
            let rows: Vec<ComparisonRow> = rows
                .iter()
                .map(|r| ComparisonRow {
                    metric: r.metric.clone(),
                    group_a: round_sig4(r.group_a),
                    group_b: round_sig4(r.group_b),
                    ratio: r.ratio.map(round_sig4),
                })
                .collect();
            let body = serde_json::json!({ "percentiles": tables, "comparisons": rows });
            let mut text = serde_json::to_string_pretty(&body).expect("plain data serializes");
            text.push('\n');
            let path = dir.join("report.json");
            fs::write(&path, text).map_err(io_err(&path))?;
            written.push(path);
        }
    }
    Ok(written)
}
