//! Head-to-head comparison of the top two hypotheses over a grid of pose
//! offsets: where does the runner-up actually hold the better inverse?
//!
//! Distances are min-max normalized over the union of both hypotheses'
//! values across the whole grid, so the two surfaces share one scale and
//! their difference lands in [−1, 1]. Accuracy, confidence, and support are
//! compared per cell by sign.

use serde::{Deserialize, Serialize};

use crate::error::{ItsError, Result};
use crate::group::{frobenius_distance, AffineTransform, SubgroupSpec};
use crate::image::Image;
use crate::model::LogitModel;
use crate::scalar::Real;
use crate::search::{its_search, SearchConfig};
use crate::warp::warp;

/// Raw per-cell measurements for the incumbent (`h0`) and runner-up (`h1`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub h0_distance: f64,
    pub h1_distance: f64,
    pub h0_correct: bool,
    pub h1_correct: bool,
    pub h0_confidence: f64,
    pub h1_confidence: f64,
    pub h0_support: usize,
    pub h1_support: usize,
}

/// Difference surfaces over the pose grid. Row index follows the first
/// (outer) subgroup's exponents, column index the second's.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChangeOfMindGrids {
    pub rows: usize,
    pub cols: usize,
    /// Cross-normalized d̄(H0) − d̄(H1); negative means the incumbent sits
    /// closer to the true inverse.
    pub distance: Vec<Vec<f64>>,
    /// acc(H0) − acc(H1) per cell, in {−1, 0, 1}.
    pub accuracy: Vec<Vec<f64>>,
    /// sign(conf(H0) − conf(H1)).
    pub confidence: Vec<Vec<f64>>,
    /// sign(support(H0) − support(H1)).
    pub support: Vec<Vec<f64>>,
    /// All distances equal: the normalized surface is identically zero and
    /// carries no information.
    pub degenerate: bool,
}

fn check_same_shape(h0: &[Vec<f64>], h1: &[Vec<f64>]) -> Result<()> {
    let ok = !h0.is_empty()
        && h0.len() == h1.len()
        && h0
            .iter()
            .zip(h1)
            .all(|(a, b)| !a.is_empty() && a.len() == b.len());
    if ok {
        Ok(())
    } else {
        Err(ItsError::InvalidConfig {
            what: "hypothesis grids must be nonempty and congruent".into(),
        })
    }
}

/// Normalize both distance grids by the min and max over their union, then
/// subtract. Returns the difference grid and a degeneracy flag; when every
/// distance is equal the grid is identically zero and flagged.
pub fn cross_normalized_change_of_mind(
    h0: &[Vec<f64>],
    h1: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, bool)> {
    check_same_shape(h0, h1)?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for row in h0.iter().chain(h1) {
        for &v in row {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(ItsError::InvalidConfig {
            what: "non-finite distance in change-of-mind grid".into(),
        });
    }
    if hi == lo {
        let zeros = h0.iter().map(|r| vec![0.0; r.len()]).collect();
        return Ok((zeros, true));
    }
    let scale = hi - lo;
    let diff = h0
        .iter()
        .zip(h1)
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(&x, &y)| (x - lo) / scale - (y - lo) / scale)
                .collect()
        })
        .collect();
    Ok((diff, false))
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Assemble all four difference surfaces from raw per-cell outcomes.
pub fn change_of_mind_grids(cells: &[Vec<CellOutcome>]) -> Result<ChangeOfMindGrids> {
    let d0: Vec<Vec<f64>> = cells
        .iter()
        .map(|r| r.iter().map(|c| c.h0_distance).collect())
        .collect();
    let d1: Vec<Vec<f64>> = cells
        .iter()
        .map(|r| r.iter().map(|c| c.h1_distance).collect())
        .collect();
    let (distance, degenerate) = cross_normalized_change_of_mind(&d0, &d1)?;
    let map = |f: &dyn Fn(&CellOutcome) -> f64| -> Vec<Vec<f64>> {
        cells
            .iter()
            .map(|r| r.iter().map(f).collect())
            .collect()
    };
    Ok(ChangeOfMindGrids {
        rows: cells.len(),
        cols: cells[0].len(),
        distance,
        accuracy: map(&|c| (c.h0_correct as i32 - c.h1_correct as i32) as f64),
        confidence: map(&|c| sign(c.h0_confidence - c.h1_confidence)),
        support: map(&|c| sign(c.h0_support as f64 - c.h1_support as f64)),
        degenerate,
    })
}

/// Sweep a two-axis pose grid: perturb `canonical` by every element pair of
/// the two subgroups, canonicalize with at least two hypotheses, and record
/// how the incumbent and the runner-up each did.
pub fn pose_grid_outcomes<T: Real>(
    model: &dyn LogitModel<T>,
    canonical: &Image<T>,
    true_label: usize,
    axis_a: SubgroupSpec<T>,
    axis_b: SubgroupSpec<T>,
    cfg: &SearchConfig<T>,
) -> Result<Vec<Vec<CellOutcome>>> {
    if cfg.k < 2 {
        return Err(ItsError::InvalidConfig {
            what: "change-of-mind comparison needs a beam of at least 2".into(),
        });
    }
    let mut rows = Vec::new();
    for a in axis_a.exponents() {
        let mut row = Vec::new();
        for b in axis_b.exponents() {
            let g = AffineTransform::compose(&axis_a.element_at(a)?, &axis_b.element_at(b)?);
            let shifted = warp(canonical, &g, cfg.warp)?;
            let result = its_search(model, &shifted, cfg)?;
            let gt_inverse = g.inverse()?;
            let h0 = &result.ranked[0];
            let h1 = &result.ranked[1];
            row.push(CellOutcome {
                h0_distance: frobenius_distance(&h0.cumulative, &gt_inverse).widen(),
                h1_distance: frobenius_distance(&h1.cumulative, &gt_inverse).widen(),
                h0_correct: h0.label == true_label,
                h1_correct: h1.label == true_label,
                h0_confidence: h0.best_confidence_seen.widen(),
                h1_confidence: h1.best_confidence_seen.widen(),
                h0_support: h0.support_for(h0.label),
                h1_support: h1.support_for(h1.label),
            });
        }
        rows.push(row);
    }
    Ok(rows)
}
