use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "cycle,budget_total,boxes_labeled,reviews_miss,reviews_flip,map,precision_miss,precision_flip,active_images,active_boxes,active_error_fraction";

const METRIC_NAMES: [&str; 10] = [
    "budget_total",
    "boxes_labeled",
    "reviews_miss",
    "reviews_flip",
    "map",
    "precision_miss",
    "precision_flip",
    "active_images",
    "active_boxes",
    "active_error_fraction",
];

pub const AGGREGATE_HEADER: &str = "cycle,seeds,budget_total_mean,budget_total_std,boxes_labeled_mean,boxes_labeled_std,reviews_miss_mean,reviews_miss_std,reviews_flip_mean,reviews_flip_std,map_mean,map_std,precision_miss_mean,precision_miss_std,precision_flip_mean,precision_flip_std,active_images_mean,active_images_std,active_boxes_mean,active_boxes_std,active_error_fraction_mean,active_error_fraction_std";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleMetrics {
    pub cycle: u32,
    /// Cumulative spend including the initial labeled set.
    pub budget_total: u64,
    pub boxes_labeled: u64,
    pub reviews_miss: u64,
    pub reviews_flip: u64,
    pub map: f64,
    pub precision_miss: Option<f64>,
    pub precision_flip: Option<f64>,
    pub active_images: u64,
    pub active_boxes: u64,
    pub active_error_fraction: f64,
}

impl CycleMetrics {
    fn values(&self) -> [Option<f64>; 10] {
        [
            Some(self.budget_total as f64),
            Some(self.boxes_labeled as f64),
            Some(self.reviews_miss as f64),
            Some(self.reviews_flip as f64),
            Some(self.map),
            self.precision_miss,
            self.precision_flip,
            Some(self.active_images as f64),
            Some(self.active_boxes as f64),
            Some(self.active_error_fraction),
        ]
    }

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.cycle,
            self.budget_total,
            self.boxes_labeled,
            self.reviews_miss,
            self.reviews_flip,
            self.map,
            opt(self.precision_miss),
            opt(self.precision_flip),
            self.active_images,
            self.active_boxes,
            self.active_error_fraction
        )
    }
}

pub fn metrics_csv(rows: &[CycleMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

pub fn write_metrics_csv(path: &Path, rows: &[CycleMetrics]) -> Result<()> {
    fs::write(path, metrics_csv(rows)).map_err(|e| Error::io(path, e))
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, name: &str, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        message: format!("line {line}: bad {name} value {s:?}"),
    })
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<CycleMetrics>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: "line 1: unexpected metrics header".into(),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let n = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 11 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                message: format!("line {n}: expected 11 fields, found {}", f.len()),
            });
        }
        let opt = |name, s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                parse_field(path, n, name, s).map(Some)
            }
        };
        rows.push(CycleMetrics {
            cycle: parse_field(path, n, "cycle", f[0])?,
            budget_total: parse_field(path, n, "budget_total", f[1])?,
            boxes_labeled: parse_field(path, n, "boxes_labeled", f[2])?,
            reviews_miss: parse_field(path, n, "reviews_miss", f[3])?,
            reviews_flip: parse_field(path, n, "reviews_flip", f[4])?,
            map: parse_field(path, n, "map", f[5])?,
            precision_miss: opt("precision_miss", f[6])?,
            precision_flip: opt("precision_flip", f[7])?,
            active_images: parse_field(path, n, "active_images", f[8])?,
            active_boxes: parse_field(path, n, "active_boxes", f[9])?,
            active_error_fraction: parse_field(path, n, "active_error_fraction", f[10])?,
        });
    }
    Ok(rows)
}

/// Per-cycle mean and sample standard deviation across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub cycle: u32,
    pub seeds: usize,
    /// In `METRICS_HEADER` order, without the cycle column. Undefined
    /// values (e.g. precision with no reviews) are skipped; a metric that is
    /// undefined for every seed stays `None`.
    pub mean: [Option<f64>; 10],
    pub std: [Option<f64>; 10],
}

impl AggregateRow {
    pub fn mean_of(&self, name: &str) -> Option<f64> {
        METRIC_NAMES.iter().position(|n| *n == name).and_then(|i| self.mean[i])
    }

    pub fn std_of(&self, name: &str) -> Option<f64> {
        METRIC_NAMES.iter().position(|n| *n == name).and_then(|i| self.std[i])
    }
}

fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() < 2 {
        0.0
    } else {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (Some(mean), Some(std))
}

/// Aligns runs by row position.
pub fn aggregate(runs: &[Vec<CycleMetrics>]) -> Vec<AggregateRow> {
    let len = runs.iter().map(Vec::len).max().unwrap_or(0);
    (0..len)
        .map(|i| {
            let rows: Vec<&CycleMetrics> = runs.iter().filter_map(|r| r.get(i)).collect();
            let mut mean = [None; 10];
            let mut std = [None; 10];
            for m in 0..10 {
                let xs: Vec<f64> = rows.iter().filter_map(|r| r.values()[m]).collect();
                (mean[m], std[m]) = mean_std(&xs);
            }
            AggregateRow {
                cycle: rows[0].cycle,
                seeds: rows.len(),
                mean,
                std,
            }
        })
        .collect()
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from(AGGREGATE_HEADER);
    out.push('\n');
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let _ = write!(out, "{},{}", r.cycle, r.seeds);
        for m in 0..10 {
            let _ = write!(out, ",{},{}", opt(r.mean[m]), opt(r.std[m]));
        }
        out.push('\n');
    }
    out
}

pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    fs::write(path, aggregate_csv(rows)).map_err(|e| Error::io(path, e))
}
