//! Batch evaluation of a classifier on a pose-shifted set, with and without
//! canonicalization, producing a serializable report of per-sample rows and
//! recomputable aggregates.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::group::{frobenius_distance, AffineTransform};
use crate::model::{top1, top_k, LogitModel};
use crate::scalar::Real;
use crate::search::{its_search, SearchConfig};

use super::perturb::GSample;

/// Everything recorded for one test sample. Canonicalization fields are
/// `None` when the run is vanilla-only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EvalRow<T: Real> {
    pub index: usize,
    pub true_label: usize,
    /// Noise-free top-1 on the shifted image, no canonicalization.
    pub vanilla_top1: usize,
    /// Noise-free top-1 on the canonicalized image.
    pub its_top1: Option<usize>,
    /// True label within the top five of the incumbent's posterior.
    pub acc5_incumbent: Option<bool>,
    /// True label among the top-1 labels across the whole beam.
    pub acc5_beam: Option<bool>,
    pub ground_truth: AffineTransform<T>,
    /// Incumbent cumulative transform.
    pub predicted: Option<AffineTransform<T>>,
    /// ‖predicted − ground_truth⁻¹‖_F.
    pub frobenius: Option<f64>,
    /// ‖I − ground_truth⁻¹‖_F: what a do-nothing canonicalizer scores.
    pub identity_frobenius: f64,
    pub wall_ms: f64,
    pub evaluations: usize,
}

/// Aggregates over all rows, recomputable via [`aggregate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub samples: usize,
    pub vanilla_acc1: f64,
    pub its_acc1: Option<f64>,
    pub acc5_incumbent: Option<f64>,
    pub acc5_beam: Option<f64>,
    pub mean_frobenius: Option<f64>,
    pub sd_frobenius: Option<f64>,
    pub mean_identity_frobenius: f64,
    pub mean_evaluations: f64,
    pub mean_wall_ms: f64,
    pub sd_wall_ms: f64,
}

/// The scalar configuration the report was produced under, flattened to
/// plain strings and numbers so reports stay readable without the library.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub stack: String,
    pub k: usize,
    pub m_samples: usize,
    pub measure: String,
    pub final_policy: String,
    pub unique_labels: bool,
    pub seed: u64,
    pub kernel_taps: Vec<f64>,
    pub with_its: bool,
}

impl ConfigEcho {
    pub fn new<T: Real>(cfg: &SearchConfig<T>, with_its: bool) -> Self {
        ConfigEcho {
            stack: cfg.stack.to_string(),
            k: cfg.k,
            m_samples: cfg.m_samples,
            measure: cfg.measure.to_string(),
            final_policy: cfg.final_policy.to_string(),
            unique_labels: cfg.unique_labels,
            seed: cfg.seed,
            kernel_taps: cfg.kernel.taps().iter().map(|t| t.widen()).collect(),
            with_its,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EvalReport<T: Real> {
    pub schema_version: u32,
    pub config: ConfigEcho,
    pub rows: Vec<EvalRow<T>>,
    pub aggregates: Aggregates,
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn fraction(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Recompute the aggregate block from rows — the stored aggregates are
/// exactly this function's output.
pub fn aggregate<T: Real>(rows: &[EvalRow<T>]) -> Aggregates {
    let total = rows.len();
    let vanilla_hits = rows.iter().filter(|r| r.vanilla_top1 == r.true_label).count();
    let with_its = rows.iter().any(|r| r.its_top1.is_some());
    let (its_acc1, acc5_incumbent, acc5_beam, mean_frob, sd_frob) = if with_its {
        let its_hits = rows
            .iter()
            .filter(|r| r.its_top1 == Some(r.true_label))
            .count();
        let acc5i = rows.iter().filter(|r| r.acc5_incumbent == Some(true)).count();
        let acc5ii = rows.iter().filter(|r| r.acc5_beam == Some(true)).count();
        let frobs: Vec<f64> = rows.iter().filter_map(|r| r.frobenius).collect();
        let (mf, sf) = mean_sd(&frobs);
        (
            Some(fraction(its_hits, total)),
            Some(fraction(acc5i, total)),
            Some(fraction(acc5ii, total)),
            Some(mf),
            Some(sf),
        )
    } else {
        (None, None, None, None, None)
    };
    let id_frobs: Vec<f64> = rows.iter().map(|r| r.identity_frobenius).collect();
    let walls: Vec<f64> = rows.iter().map(|r| r.wall_ms).collect();
    let evals: Vec<f64> = rows.iter().map(|r| r.evaluations as f64).collect();
    let (mean_wall, sd_wall) = mean_sd(&walls);
    Aggregates {
        samples: total,
        vanilla_acc1: fraction(vanilla_hits, total),
        its_acc1,
        acc5_incumbent,
        acc5_beam,
        mean_frobenius: mean_frob,
        sd_frobenius: sd_frob,
        mean_identity_frobenius: mean_sd(&id_frobs).0,
        mean_evaluations: mean_sd(&evals).0,
        mean_wall_ms: mean_wall,
        sd_wall_ms: sd_wall,
    }
}

fn eval_one<T: Real>(
    model: &dyn LogitModel<T>,
    index: usize,
    sample: &GSample<T>,
    cfg: &SearchConfig<T>,
    with_its: bool,
) -> Result<EvalRow<T>> {
    let start = Instant::now();
    let vanilla_top1 = top1(&model.evaluate(&sample.image, None)?);
    let gt_inverse = sample.ground_truth.inverse()?;
    let identity_frobenius =
        frobenius_distance(&AffineTransform::identity(), &gt_inverse).widen();
    let mut row = EvalRow {
        index,
        true_label: sample.label,
        vanilla_top1,
        its_top1: None,
        acc5_incumbent: None,
        acc5_beam: None,
        ground_truth: sample.ground_truth,
        predicted: None,
        frobenius: None,
        identity_frobenius,
        wall_ms: 0.0,
        evaluations: 1,
    };
    if with_its {
        let result = its_search(model, &sample.image, cfg)?;
        let canonical_logits = model.evaluate(&result.canonical_image, None)?;
        let incumbent = result.incumbent();
        row.its_top1 = Some(top1(&canonical_logits));
        row.acc5_incumbent = Some(top_k(&canonical_logits, 5).contains(&sample.label));
        row.acc5_beam = Some(result.ranked.iter().any(|h| h.label == sample.label));
        row.predicted = Some(incumbent.cumulative);
        row.frobenius = Some(frobenius_distance(&incumbent.cumulative, &gt_inverse).widen());
        row.evaluations = result.evaluations;
    }
    row.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(row)
}

/// Score `model` on a shifted set, vanilla and (optionally) canonicalized.
///
/// Samples are processed in parallel; rows come back in sample order and the
/// aggregate block is a sequential fold over them, so the report content is
/// independent of scheduling (wall times aside).
pub fn evaluate<T: Real>(
    model: &dyn LogitModel<T>,
    samples: &[GSample<T>],
    cfg: &SearchConfig<T>,
    with_its: bool,
) -> Result<EvalReport<T>> {
    let rows: Vec<EvalRow<T>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| eval_one(model, i, s, cfg, with_its))
        .collect::<Result<_>>()?;
    let aggregates = aggregate(&rows);
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: ConfigEcho::new(cfg, with_its),
        rows,
        aggregates,
    })
}
