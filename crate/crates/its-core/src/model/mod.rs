//! Classifier backends. The search only ever talks to [`LogitModel`]: a
//! `num_classes`-way logit function with an optional noise seed. A seed makes
//! the pass stochastic-but-replayable (dropout masks are drawn from it); no
//! seed means a noise-free pass with every unit kept.

mod cnn;
mod linear;
mod template;
mod train;
mod weights;

pub use cnn::{CnnModel, CnnTrace, DropoutConfig};
pub use linear::LinearModel;
pub use template::TemplateModel;
pub use train::{train_softmax_regression, TrainReport};
pub use weights::{Tensor, WeightFile, DTYPE_F32, WEIGHT_FILE_VERSION};

use std::path::Path;

use crate::error::{ItsError, Result};
use crate::image::Image;
use crate::scalar::Real;
use crate::seeding;

/// The logit contract every backend satisfies.
///
/// Implementations must be pure in `(img, noise_seed)`: identical arguments
/// produce bit-identical logits, all stochasticity flows through the seed,
/// and concurrent calls are safe (models are immutable after construction).
pub trait LogitModel<T: Real>: Send + Sync {
    fn num_classes(&self) -> usize;

    /// Raw class scores for one image. `noise_seed: None` is the noise-free
    /// pass (all dropout masks keep); `Some(s)` draws masks from `s`.
    fn evaluate(&self, img: &Image<T>, noise_seed: Option<u64>) -> Result<Vec<T>>;
}

impl<T: Real, M: LogitModel<T> + ?Sized> LogitModel<T> for &M {
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }
    fn evaluate(&self, img: &Image<T>, noise_seed: Option<u64>) -> Result<Vec<T>> {
        (**self).evaluate(img, noise_seed)
    }
}

/// Numerically stable softmax (max-subtracted). Sums to 1 within 1e-12.
pub fn softmax<T: Real>(logits: &[T]) -> Result<Vec<T>> {
    if logits.is_empty() {
        return Err(ItsError::EmptyLogits);
    }
    let max = logits.iter().cloned().fold(logits[0], T::max);
    let exps: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: T = exps.iter().fold(T::zero(), |a, &b| a + b);
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Exact GeLU: `x/2 * (1 + erf(x / sqrt(2)))` — the Gaussian-CDF form, not
/// the tanh approximation, so activations replay bit-for-bit against fixture
/// generators that use the same definition.
#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    T::of(0.5) * x * (T::one() + (x / T::SQRT_2()).erf())
}

/// Run `m_samples` stochastic passes; pass `m` uses a noise seed derived
/// deterministically from `(seed, m)`. Returns all logit vectors so callers
/// can average posteriors or energies as they see fit.
pub fn mc_forward<T: Real>(
    model: &dyn LogitModel<T>,
    img: &Image<T>,
    m_samples: usize,
    seed: u64,
) -> Result<Vec<Vec<T>>> {
    if m_samples == 0 {
        return Err(ItsError::InvalidConfig {
            what: "mc_forward needs at least one sample".into(),
        });
    }
    (0..m_samples)
        .map(|m| model.evaluate(img, Some(seeding::mix(seed, &[m as u64]))))
        .collect()
}

/// Argmax with ties broken toward the lower index.
pub fn top1<T: Real>(logits: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Indices of the `k` largest logits, descending (ties toward lower index).
pub fn top_k<T: Real>(logits: &[T], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|&a, &b| {
        logits[b]
            .partial_cmp(&logits[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

/// Load whichever model a weight file holds: files written by the trainer
/// carry a single `fc` tensor pair (linear head), CNN files carry the
/// conv/fc stack.
pub fn load_model<T: Real>(path: &Path) -> Result<Box<dyn LogitModel<T>>> {
    let wf = WeightFile::<T>::read(path)?;
    if wf.get("conv1.weight").is_ok() {
        Ok(Box::new(CnnModel::from_weight_file(&wf, DropoutConfig::default())?))
    } else {
        Ok(Box::new(LinearModel::from_weight_file(&wf)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_reference_points() {
        let p = softmax(&[0.0f64, 0.0]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);

        let p = softmax(&[1f64.ln(), 3f64.ln()]).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-12);
        assert!((p[1] - 0.75).abs() < 1e-12);

        // shift-robust: huge logits do not overflow
        let p = softmax(&[1000.0f64, 1000.0]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_empty_input() {
        assert!(matches!(softmax::<f64>(&[]), Err(ItsError::EmptyLogits)));
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0f64), 0.0);
        // approaches identity for large positive inputs
        for x in [6.0f64, 8.0, 12.0] {
            assert!((gelu(x) - x).abs() < 1e-3);
        }
        // and zero for large negative inputs
        assert!(gelu(-8.0f64).abs() < 1e-3);
        // gelu(1) = 0.5 * (1 + erf(1/sqrt 2)) = 0.8413447460685429
        assert!((gelu(1.0f64) - 0.841_344_746_068_542_9).abs() < 1e-12);
    }

    #[test]
    fn top_k_orders_descending_with_stable_ties() {
        assert_eq!(top1(&[1.0f64, 3.0, 2.0]), 1);
        assert_eq!(top1(&[2.0f64, 2.0]), 0);
        assert_eq!(top_k(&[1.0f64, 3.0, 2.0, 3.0], 3), vec![1, 3, 2]);
    }

    proptest! {
        #[test]
        fn softmax_is_shift_invariant(v in proptest::collection::vec(-20.0f64..20.0, 1..8), c in -50.0f64..50.0) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let a = softmax(&v).unwrap();
            let b = softmax(&shifted).unwrap();
            let sum: f64 = a.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
