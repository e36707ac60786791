//! Construction of pose-shifted test sets: each sample is hit by one random
//! element per layer of a stack, composed into a single ground-truth
//! transform and applied with a single warp.

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{ItsError, Result};
use crate::group::{kind_matrix, AffineTransform};
use crate::image::Image;
use crate::scalar::Real;
use crate::search::LayerStack;
use crate::seeding::{mix, uniform01, uniform_range};
use crate::warp::{warp, WarpConfig};

use super::shapes::{ShapesDataset, Split};

/// How pose offsets are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbMode {
    /// Uniform over the sampled exponents of each layer, so every
    /// ground-truth factor is exactly some `element_at(j)`.
    OnGrid,
    /// Uniform over the continuous parameter range. Reflection layers have
    /// no continuum and fall back to grid draws.
    Continuous,
}

/// Random pose-offset distribution for a given layer stack.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub mode: PerturbMode,
    pub seed: u64,
    /// Per-layer half-ranges for the drawn parameter. `None` uses each
    /// layer's full bound.
    pub ranges: Option<Vec<f64>>,
}

impl PerturbationSpec {
    pub fn full(mode: PerturbMode, seed: u64) -> Self {
        PerturbationSpec {
            mode,
            seed,
            ranges: None,
        }
    }

    /// Resolve per-layer ranges against a stack, validating lengths and
    /// bounds.
    pub fn resolved_ranges<T: Real>(&self, stack: &LayerStack<T>) -> Result<Vec<f64>> {
        match &self.ranges {
            None => Ok(stack
                .layers()
                .iter()
                .map(|l| l.bound.widen())
                .collect()),
            Some(ranges) => {
                if ranges.len() != stack.depth() {
                    return Err(ItsError::InvalidConfig {
                        what: format!(
                            "{} perturbation ranges for a depth-{} stack",
                            ranges.len(),
                            stack.depth()
                        ),
                    });
                }
                for (index, (&range, layer)) in ranges.iter().zip(stack.layers()).enumerate() {
                    let bound = layer.bound.widen();
                    if !range.is_finite() || range < 0.0 || range > bound {
                        return Err(ItsError::RangeExceedsBound {
                            index,
                            range,
                            bound,
                        });
                    }
                }
                Ok(ranges.clone())
            }
        }
    }
}

/// One pose-shifted sample: the warped image, its class label, and the
/// transform that produced it.
#[derive(Clone, Debug)]
pub struct GSample<T: Real> {
    pub image: Image<T>,
    pub label: usize,
    pub ground_truth: AffineTransform<T>,
}

/// Draw one ground-truth transform: one element per layer, composed in
/// stack order with the first layer outermost — the orientation the search
/// peels off level by level.
fn draw_transform<T: Real>(
    stack: &LayerStack<T>,
    ranges: &[f64],
    mode: PerturbMode,
    rng: &mut ChaCha8Rng,
) -> AffineTransform<T> {
    let mut g = AffineTransform::identity();
    for (layer, &range) in stack.layers().iter().zip(ranges) {
        let continuous = mode == PerturbMode::Continuous && !layer.kind.is_reflection();
        let element = if continuous {
            let u = uniform_range(rng, -range, range);
            kind_matrix(layer.kind, T::of(u))
        } else {
            let admissible: Vec<i64> = layer
                .exponents()
                .filter(|&j| layer.param_at(j).abs().widen() <= range + 1e-12)
                .collect();
            let pick = ((uniform01(rng) * admissible.len() as f64) as usize)
                .min(admissible.len() - 1);
            layer
                .element_at(admissible[pick])
                .expect("admissible exponent is in range")
        };
        g = AffineTransform::compose(&g, &element);
    }
    g
}

/// Build the pose-shifted counterpart of one dataset split.
///
/// Refuses `Split::Train`: fitting data stays canonical by construction, and
/// keeping perturbation away from it preserves that invariant. Identity
/// draws are possible (and for reflections with sub-unit range, certain), so
/// the shifted set may intersect the original one.
///
/// Each sample's randomness derives only from `(spec.seed, sample index)`,
/// never from the draw schedule, so subsetting a split does not change the
/// transforms assigned to the samples that remain.
pub fn make_g_test_set<T: Real>(
    dataset: &ShapesDataset<T>,
    split: Split,
    stack: &LayerStack<T>,
    spec: &PerturbationSpec,
    warp_cfg: WarpConfig,
) -> Result<Vec<GSample<T>>> {
    if split == Split::Train {
        return Err(ItsError::InvalidConfig {
            what: "refusing to pose-shift the train split; fit on canonical data only".into(),
        });
    }
    let ranges = spec.resolved_ranges(stack)?;
    let mut out = Vec::new();
    for (i, sample) in dataset.split_samples(split).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(spec.seed, &[i as u64]));
        let g = draw_transform(stack, &ranges, spec.mode, &mut rng);
        let image = warp(&sample.image, &g, warp_cfg)?;
        out.push(GSample {
            image,
            label: sample.label,
            ground_truth: g,
        });
    }
    Ok(out)
}
