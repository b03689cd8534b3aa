//! Merges per-run records into plot-ready files.
//!
//! * `curves.csv`: one row per record, sorted by granularity, ω, seed.
//!   Columns `granularity,omega,seed,napl,avg_slope,prop_disabled,train_acc,test_acc`.
//! * `histograms.json`: array of `{granularity, omega, seed, napl, lengths, mass}`.
//! * `summary.json`: `max_napl`; `bins`, ten equal NAPL bins on
//!   `[0, max_napl]` with per-granularity test-accuracy `{n, mean, sd}`, the
//!   channel-minus-layer `gap` and the `pooled_sd`; `curves`, per
//!   (granularity, ω) means and sample standard deviations across seeds;
//!   `missing`, the units that failed.
//!
//! Floats are written in shortest round-trip form, so output bytes depend only
//! on the set of records, never on the order they were produced in.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::experiment::{io_err, write_json, FAILURES_DIR, RECORDS_DIR};
use super::HarnessError;
use crate::linearize::SweepRecord;
use crate::network::Granularity;

pub const CURVES_FILE: &str = "curves.csv";
pub const HISTOGRAMS_FILE: &str = "histograms.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CURVES_HEADER: &str = "granularity,omega,seed,napl,avg_slope,prop_disabled,train_acc,test_acc";
pub const NAPL_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub granularity: Granularity,
    pub omega: f64,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub sd: f64,
}

impl GroupStats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { n, mean, sd })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSummary {
    pub lo: f64,
    pub hi: f64,
    pub channel: Option<GroupStats>,
    pub layer: Option<GroupStats>,
    /// Channel mean minus layer mean.
    pub gap: Option<f64>,
    pub pooled_sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub granularity: Granularity,
    pub omega: f64,
    pub napl: GroupStats,
    pub train_acc: GroupStats,
    pub test_acc: GroupStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramEntry {
    pub granularity: Granularity,
    pub omega: f64,
    pub seed: u64,
    pub napl: f64,
    pub lengths: Vec<usize>,
    pub mass: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub max_napl: Option<f64>,
    pub bins: Vec<BinSummary>,
    pub curves: Vec<CurvePoint>,
    pub missing: Vec<FailureRecord>,
}

fn pooled_sd(a: &GroupStats, b: &GroupStats) -> Option<f64> {
    let dof = a.n + b.n;
    (dof > 2).then(|| {
        (((a.n - 1) as f64 * a.sd.powi(2) + (b.n - 1) as f64 * b.sd.powi(2)) / (dof - 2) as f64).sqrt()
    })
}

fn read_dir_json<T: for<'de> Deserialize<'de>>(dir: &Path) -> Vec<T> {
    let Ok(entries) = fs::read_dir(dir) else {
        return Vec::new();
    };
    let mut paths: Vec<_> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .filter_map(|p| match fs::read(&p).map_err(|e| e.to_string()).and_then(|b| {
            serde_json::from_slice(&b).map_err(|e| e.to_string())
        }) {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("skipping {}: {e}", p.display());
                None
            }
        })
        .collect()
}

fn order_key(g: Granularity, omega: f64, seed: u64) -> (&'static str, u64, u64) {
    // ω is non-negative, so its bit pattern sorts like its value.
    (g.as_str(), omega.to_bits(), seed)
}

/// Builds the summary from a set of records.
pub fn summarize(records: &[SweepRecord], missing: Vec<FailureRecord>) -> Summary {
    let max_napl = records.iter().map(|r| r.max_napl).reduce(f64::max);
    let mut bins = Vec::new();
    if let Some(max) = max_napl.filter(|m| *m > 0.0) {
        let width = max / NAPL_BINS as f64;
        let mut acc: Vec<[Vec<f64>; 2]> = vec![[Vec::new(), Vec::new()]; NAPL_BINS];
        for r in records {
            let b = ((r.napl / width) as usize).min(NAPL_BINS - 1);
            acc[b][usize::from(r.granularity == Granularity::Layer)].push(r.test_acc);
        }
        for (i, [c, l]) in acc.iter().enumerate() {
            let (channel, layer) = (GroupStats::of(c), GroupStats::of(l));
            let (gap, pooled) = match (&channel, &layer) {
                (Some(c), Some(l)) => (Some(c.mean - l.mean), pooled_sd(c, l)),
                _ => (None, None),
            };
            bins.push(BinSummary {
                lo: width * i as f64,
                hi: width * (i + 1) as f64,
                channel,
                layer,
                gap,
                pooled_sd: pooled,
            });
        }
    }

    let mut groups: BTreeMap<(&'static str, u64), Vec<&SweepRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.granularity.as_str(), r.omega.to_bits())).or_default().push(r);
    }
    let curves = groups
        .values()
        .map(|rs| {
            let col = |f: fn(&SweepRecord) -> f64| GroupStats::of(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            CurvePoint {
                granularity: rs[0].granularity,
                omega: rs[0].omega,
                napl: col(|r| r.napl).expect("non-empty group"),
                train_acc: col(|r| r.train_acc).expect("non-empty group"),
                test_acc: col(|r| r.test_acc).expect("non-empty group"),
            }
        })
        .collect();
    Summary { max_napl, bins, curves, missing }
}

/// Renders `curves.csv` for records already in canonical order.
pub fn curves_csv(records: &[SweepRecord]) -> String {
    let mut out = String::from(CURVES_HEADER);
    out.push('\n');
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.granularity, r.omega, r.seed, r.napl, r.avg_slope, r.prop_disabled, r.train_acc, r.test_acc
        )
        .expect("string write");
    }
    out
}

/// Reads `records/` and `failures/` under `dir` and writes the merged files.
/// Unreadable record files are skipped with a warning.
pub fn report(dir: &Path) -> Result<Summary, HarnessError> {
    let mut records: Vec<SweepRecord> = read_dir_json(&dir.join(RECORDS_DIR));
    records.sort_by(|a, b| order_key(a.granularity, a.omega, a.seed).cmp(&order_key(b.granularity, b.omega, b.seed)));
    let mut missing: Vec<FailureRecord> = read_dir_json(&dir.join(FAILURES_DIR));
    missing.sort_by(|a, b| order_key(a.granularity, a.omega, a.seed).cmp(&order_key(b.granularity, b.omega, b.seed)));

    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let csv = dir.join(CURVES_FILE);
    fs::write(&csv, curves_csv(&records)).map_err(|e| io_err(&csv, e))?;
    let histograms: Vec<HistogramEntry> = records
        .iter()
        .map(|r| HistogramEntry {
            granularity: r.granularity,
            omega: r.omega,
            seed: r.seed,
            napl: r.napl,
            lengths: r.histogram.lengths.clone(),
            mass: r.histogram.mass.clone(),
        })
        .collect();
    write_json(&dir.join(HISTOGRAMS_FILE), &histograms)?;
    let summary = summarize(&records, missing);
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}
