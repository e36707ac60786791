//! Desk-scale trainer: full-batch gradient descent on the negative
//! log-likelihood of a flatten-and-affine classifier. Weights start at zero,
//! so the run is deterministic; the step size is halved (and the step
//! reverted) whenever it would increase the loss, which makes the recorded
//! loss curve non-increasing by construction.

use crate::error::{ItsError, Result};
use crate::image::Image;
use crate::model::LinearModel;
use crate::scalar::Real;

#[derive(Clone, Debug)]
pub struct TrainReport<T: Real> {
    /// Loss before training followed by the loss after each epoch
    /// (`epochs + 1` entries).
    pub losses: Vec<T>,
    /// Step size in effect when training ended.
    pub final_learning_rate: T,
    /// Fraction of training samples the final model labels correctly.
    pub train_accuracy: f64,
}

/// Trains `logits = W x + b` on flattened pixels. `images` and `labels` run
/// in parallel; every label must be below `num_classes` and at least two
/// distinct classes must be present. `seed` is accepted for signature
/// stability but unused: zero initialization plus full-batch steps leave
/// nothing to randomize.
pub fn train_softmax_regression<T: Real>(
    images: &[Image<T>],
    labels: &[usize],
    num_classes: usize,
    epochs: usize,
    learning_rate: T,
    _seed: u64,
) -> Result<(LinearModel<T>, TrainReport<T>)> {
    if images.is_empty() || images.len() != labels.len() {
        return Err(ItsError::InvalidConfig {
            what: format!(
                "need matching nonempty image/label slices, got {} and {}",
                images.len(),
                labels.len()
            ),
        });
    }
    if !(learning_rate.is_finite() && learning_rate > T::zero()) {
        return Err(ItsError::InvalidConfig {
            what: format!("learning rate must be finite and positive, got {learning_rate}"),
        });
    }
    let (h, w, c) = (images[0].height(), images[0].width(), images[0].channels());
    for img in &images[1..] {
        img.shape_matches(h, w, c)?;
    }
    let mut seen = vec![false; num_classes];
    for &y in labels {
        if y >= num_classes {
            return Err(ItsError::ClassOutOfRange { y, num_classes });
        }
        seen[y] = true;
    }
    let distinct = seen.iter().filter(|s| **s).count();
    if distinct < 2 {
        return Err(ItsError::DegenerateDataset { found: distinct });
    }

    let features = h * w * c;
    let n = images.len();
    let mut weight = vec![T::zero(); num_classes * features];
    let mut bias = vec![T::zero(); num_classes];
    let mut lr = learning_rate;

    let mut loss = nll(&weight, &bias, num_classes, features, images, labels);
    let mut losses = Vec::with_capacity(epochs + 1);
    losses.push(loss);

    let mut grad_w = vec![T::zero(); num_classes * features];
    let mut grad_b = vec![T::zero(); num_classes];
    for _ in 0..epochs {
        grad_w.iter_mut().for_each(|g| *g = T::zero());
        grad_b.iter_mut().for_each(|g| *g = T::zero());
        let inv_n = T::one() / T::of(n as f64);
        for (img, &y) in images.iter().zip(labels) {
            let x = img.pixels();
            let p = posterior(&weight, &bias, num_classes, features, x);
            for class in 0..num_classes {
                let mut resid = p[class];
                if class == y {
                    resid -= T::one();
                }
                resid *= inv_n;
                grad_b[class] += resid;
                let row = &mut grad_w[class * features..(class + 1) * features];
                for (g, v) in row.iter_mut().zip(x) {
                    *g += resid * *v;
                }
            }
        }

        let cand_w: Vec<T> = weight.iter().zip(&grad_w).map(|(w, g)| *w - lr * *g).collect();
        let cand_b: Vec<T> = bias.iter().zip(&grad_b).map(|(b, g)| *b - lr * *g).collect();
        let cand_loss = nll(&cand_w, &cand_b, num_classes, features, images, labels);
        if cand_loss <= loss {
            weight = cand_w;
            bias = cand_b;
            loss = cand_loss;
        } else {
            lr = lr / T::of(2.0);
        }
        losses.push(loss);
    }

    let mut correct = 0usize;
    for (img, &y) in images.iter().zip(labels) {
        let p = posterior(&weight, &bias, num_classes, features, img.pixels());
        let top = p
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if top == y {
            correct += 1;
        }
    }

    let model = LinearModel::new(weight, bias, num_classes, features)?;
    let report = TrainReport {
        losses,
        final_learning_rate: lr,
        train_accuracy: correct as f64 / n as f64,
    };
    Ok((model, report))
}

fn posterior<T: Real>(
    weight: &[T],
    bias: &[T],
    classes: usize,
    features: usize,
    x: &[T],
) -> Vec<T> {
    let mut logits = Vec::with_capacity(classes);
    for class in 0..classes {
        let row = &weight[class * features..(class + 1) * features];
        let mut acc = bias[class];
        for (w, v) in row.iter().zip(x) {
            acc += *w * *v;
        }
        logits.push(acc);
    }
    let max = logits.iter().cloned().fold(logits[0], T::max);
    let mut sum = T::zero();
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        sum += *l;
    }
    logits.iter_mut().for_each(|l| *l = *l / sum);
    logits
}

/// Mean negative log-likelihood via max-subtracted log-sum-exp.
fn nll<T: Real>(
    weight: &[T],
    bias: &[T],
    classes: usize,
    features: usize,
    images: &[Image<T>],
    labels: &[usize],
) -> T {
    let mut total = T::zero();
    for (img, &y) in images.iter().zip(labels) {
        let x = img.pixels();
        let mut logits = Vec::with_capacity(classes);
        for class in 0..classes {
            let row = &weight[class * features..(class + 1) * features];
            let mut acc = bias[class];
            for (w, v) in row.iter().zip(x) {
                acc += *w * *v;
            }
            logits.push(acc);
        }
        let max = logits.iter().cloned().fold(logits[0], T::max);
        let lse = max
            + logits
                .iter()
                .map(|l| (*l - max).exp())
                .fold(T::zero(), |a, b| a + b)
                .ln();
        total += lse - logits[y];
    }
    total / T::of(images.len() as f64)
}
