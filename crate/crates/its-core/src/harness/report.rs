//! Report emission: pretty JSON with a schema version, CSV with a stable
//! column order, and timing-field erasure for byte-level comparisons.

use std::fs;
use std::path::Path;

use serde::{de::DeserializeOwned, Serialize};

use crate::error::{ItsError, Result};
use crate::group::AffineTransform;
use crate::scalar::Real;

use super::evaluate::{EvalReport, EvalRow};
use super::profile::ProfileRow;

pub fn write_json<S: Serialize>(value: &S, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| ItsError::io(path, e))
}

pub fn read_json<D: DeserializeOwned>(path: &Path) -> Result<D> {
    let text = fs::read_to_string(path).map_err(|e| ItsError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Write rows under a fixed header. Zero rows still produce the header
/// line, so a consumer can always read the schema off the file.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut text = header.join(",");
    text.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| ItsError::io(path, e))
}

fn opt<D: std::fmt::Display>(v: &Option<D>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

fn matrix_cells<T: Real>(m: &AffineTransform<T>) -> impl Iterator<Item = String> + '_ {
    (0..3).flat_map(move |i| (0..3).map(move |j| m.m[i][j].widen().to_string()))
}

pub const EVAL_CSV_HEADER: [&str; 29] = [
    "index",
    "true_label",
    "vanilla_top1",
    "its_top1",
    "acc5_incumbent",
    "acc5_beam",
    "frobenius",
    "identity_frobenius",
    "wall_ms",
    "evaluations",
    "gt_00",
    "gt_01",
    "gt_02",
    "gt_10",
    "gt_11",
    "gt_12",
    "gt_20",
    "gt_21",
    "gt_22",
    "pred_00",
    "pred_01",
    "pred_02",
    "pred_10",
    "pred_11",
    "pred_12",
    "pred_20",
    "pred_21",
    "pred_22",
    "wall_stripped",
];

/// Flatten evaluation rows for CSV emission; matrices become nine columns
/// each and absent canonicalization fields become empty cells.
pub fn eval_rows_csv<T: Real>(report: &EvalReport<T>) -> Vec<Vec<String>> {
    report
        .rows
        .iter()
        .map(|r| {
            let mut cells = vec![
                r.index.to_string(),
                r.true_label.to_string(),
                r.vanilla_top1.to_string(),
                opt(&r.its_top1),
                opt(&r.acc5_incumbent),
                opt(&r.acc5_beam),
                opt(&r.frobenius),
                r.identity_frobenius.to_string(),
                r.wall_ms.to_string(),
                r.evaluations.to_string(),
            ];
            cells.extend(matrix_cells(&r.ground_truth));
            match &r.predicted {
                Some(p) => cells.extend(matrix_cells(p)),
                None => cells.extend(std::iter::repeat_n(String::new(), 9)),
            }
            cells.push((r.wall_ms == 0.0).to_string());
            cells
        })
        .collect()
}

pub const PROFILE_CSV_HEADER: [&str; 6] = [
    "depth",
    "k",
    "m_samples",
    "evaluations",
    "wall_ms_mean",
    "wall_ms_sd",
];

pub fn profile_rows_csv(rows: &[ProfileRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                r.depth.to_string(),
                r.k.to_string(),
                r.m_samples.to_string(),
                r.evaluations.to_string(),
                r.wall_ms_mean.to_string(),
                r.wall_ms_sd.to_string(),
            ]
        })
        .collect()
}

/// Zero every wall-clock field, rows and aggregates alike. Two reports from
/// identically seeded runs then serialize to identical bytes.
pub fn strip_timings<T: Real>(report: &mut EvalReport<T>) {
    for row in &mut report.rows {
        row.wall_ms = 0.0;
    }
    report.aggregates.mean_wall_ms = 0.0;
    report.aggregates.sd_wall_ms = 0.0;
}

/// Convenience for tests and the CLI: rows minus timing noise.
pub fn stripped_rows<T: Real>(report: &EvalReport<T>) -> Vec<EvalRow<T>> {
    let mut rows = report.rows.clone();
    for r in &mut rows {
        r.wall_ms = 0.0;
    }
    rows
}
