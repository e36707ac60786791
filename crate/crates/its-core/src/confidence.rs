//! Confidence measures over orbit sweeps.
//!
//! Three measures score how "at home" the classifier is at a pose:
//!
//! * **energy** — negated total energy `logsumexp(logits)`; low energy means
//!   a familiar input, so its negation is the confidence;
//! * **entropy** — negated predictive entropy of the Monte-Carlo mean
//!   posterior;
//! * **group-induced** — the curvature of the kernel-smoothed MC-mean energy
//!   along the orbit, normalized by the squared matrix-space step between
//!   consecutive generator powers. Canonical poses sit in sharp energy
//!   wells, so high positive curvature marks the pose to adopt, and the
//!   measure stays quiet on the flat or concave stretches where raw energy
//!   and entropy drift toward spurious peaks.
//!
//! Profiles over bounded orbits pad by clamping to the nearest valid index;
//! full-circle rotation orbits are genuinely cyclic, so their stencils and
//! convolutions wrap instead.

use rayon::prelude::*;

use crate::error::{ItsError, Result};
use crate::group::AffineTransform;
use crate::group::SubgroupSpec;
use crate::image::Image;
use crate::model::{mc_forward, softmax, top1, LogitModel};
use crate::scalar::Real;
use crate::seeding::mix;
use crate::warp::{warp_orbit, WarpConfig};

/// MC-mean total energy at every sampled orbit exponent; index `k`
/// corresponds to exponent `j = k - (n-1)/2` of `spec`, acting on top of
/// `base`.
#[derive(Clone, Debug)]
pub struct EnergyProfile<T: Real> {
    pub spec: SubgroupSpec<T>,
    pub base: AffineTransform<T>,
    pub values: Vec<T>,
}

impl<T: Real> EnergyProfile<T> {
    pub fn new(spec: SubgroupSpec<T>, base: AffineTransform<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != spec.n {
            return Err(ItsError::InvalidConfig {
                what: format!(
                    "profile holds {} values for a cardinality-{} subgroup",
                    values.len(),
                    spec.n
                ),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ItsError::InvalidConfig {
                what: "profile values must be finite".to_string(),
            });
        }
        Ok(EnergyProfile { spec, base, values })
    }

    /// Resolve an out-of-range neighbor index: wrap on cyclic orbits, clamp
    /// to the nearest valid index otherwise.
    fn resolve(&self, idx: isize) -> usize {
        let n = self.values.len() as isize;
        if self.spec.is_cyclic() {
            idx.rem_euclid(n) as usize
        } else {
            idx.clamp(0, n - 1) as usize
        }
    }
}

/// Odd, symmetric, nonnegative taps summing to one.
#[derive(Clone, Debug)]
pub struct SmoothingKernel<T: Real> {
    taps: Vec<T>,
}

impl<T: Real> SmoothingKernel<T> {
    pub fn new(taps: Vec<T>) -> Result<Self> {
        if taps.len() % 2 == 0 {
            return Err(ItsError::EvenKernel { len: taps.len() });
        }
        if taps.iter().any(|t| !(t.is_finite() && *t >= T::zero())) {
            return Err(ItsError::BadKernel {
                reason: "negative or non-finite tap".to_string(),
            });
        }
        let sum = taps.iter().fold(T::zero(), |a, b| a + *b);
        if (sum - T::one()).abs() > T::of(1e-12) {
            return Err(ItsError::BadKernel {
                reason: format!("taps sum to {sum}"),
            });
        }
        for (a, b) in taps.iter().zip(taps.iter().rev()) {
            if (*a - *b).abs() > T::of(1e-12) {
                return Err(ItsError::BadKernel {
                    reason: "taps are not symmetric about the center".to_string(),
                });
            }
        }
        Ok(SmoothingKernel { taps })
    }

    /// Discrete Gaussian: `taps[i] ∝ exp(-(i-c)²/(2σ²))` with σ in units of
    /// the orbit step, renormalized to sum 1.
    pub fn gaussian(taps: usize, sigma_steps: f64) -> Result<Self> {
        if taps % 2 == 0 {
            return Err(ItsError::EvenKernel { len: taps });
        }
        if !(sigma_steps.is_finite() && sigma_steps > 0.0) {
            return Err(ItsError::BadKernel {
                reason: format!("sigma must be positive, got {sigma_steps}"),
            });
        }
        let c = (taps / 2) as f64;
        let raw: Vec<f64> = (0..taps)
            .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma_steps * sigma_steps)).exp())
            .collect();
        let sum: f64 = raw.iter().sum();
        Ok(SmoothingKernel {
            taps: raw.iter().map(|t| T::of(t / sum)).collect(),
        })
    }

    /// The do-nothing kernel `[0, 1, 0]`.
    pub fn delta() -> Self {
        SmoothingKernel {
            taps: vec![T::zero(), T::one(), T::zero()],
        }
    }

    pub fn taps(&self) -> &[T] {
        &self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }
}

impl<T: Real> Default for SmoothingKernel<T> {
    /// Five taps, σ = 1 orbit step: the narrowest kernel that suppresses
    /// single-sample spikes without flattening a 17-point profile.
    fn default() -> Self {
        Self::gaussian(5, 1.0).expect("static parameters are valid")
    }
}

/// `-logsumexp(logits)`, computed with max subtraction.
pub fn total_energy<T: Real>(logits: &[T]) -> Result<T> {
    if logits.is_empty() {
        return Err(ItsError::EmptyLogits);
    }
    let max = logits.iter().cloned().fold(logits[0], T::max);
    let sum = logits
        .iter()
        .map(|l| (*l - max).exp())
        .fold(T::zero(), |a, b| a + b);
    Ok(-(max + sum.ln()))
}

/// The negated logit of class `y`.
pub fn class_energy<T: Real>(logits: &[T], y: usize) -> Result<T> {
    if y >= logits.len() {
        return Err(ItsError::ClassOutOfRange {
            y,
            num_classes: logits.len(),
        });
    }
    Ok(-logits[y])
}

/// Shannon entropy, in bits, of the mean posterior across the given logit
/// rows (`0·log 0 := 0`). Negate it to use as a confidence.
pub fn predictive_entropy<T: Real>(mc_logits: &[Vec<T>]) -> Result<T> {
    if mc_logits.is_empty() {
        return Err(ItsError::InvalidConfig {
            what: "predictive entropy needs at least one logit row".to_string(),
        });
    }
    let classes = mc_logits[0].len();
    let mut mean = vec![T::zero(); classes];
    let inv_m = T::one() / T::of(mc_logits.len() as f64);
    for row in mc_logits {
        let p = softmax(row)?;
        if p.len() != classes {
            return Err(ItsError::InvalidConfig {
                what: "logit rows disagree on class count".to_string(),
            });
        }
        for (acc, v) in mean.iter_mut().zip(p) {
            *acc += v * inv_m;
        }
    }
    let ln2 = T::of(std::f64::consts::LN_2);
    let mut h = T::zero();
    for p in mean {
        if p > T::zero() {
            h -= p * (p.ln() / ln2);
        }
    }
    Ok(h)
}

/// Everything one orbit sweep yields: the MC-mean energy profile plus, per
/// orbit point, the predictive entropy of the same MC passes and the
/// noise-free top-1 label.
#[derive(Clone, Debug)]
pub struct OrbitStats<T: Real> {
    pub profile: EnergyProfile<T>,
    pub entropies: Vec<T>,
    pub labels: Vec<usize>,
}

/// Sweep the orbit `element_at(j)·base` (each point a single resample of
/// `img`) and run `m_samples` stochastic passes per point. The noise seed of
/// pass `m` at orbit index `k` derives from `(seed, k, m)`, so any parallel
/// schedule reproduces the sequential result bit for bit.
pub fn orbit_stats<T: Real>(
    model: &dyn LogitModel<T>,
    img: &Image<T>,
    spec: &SubgroupSpec<T>,
    base: &AffineTransform<T>,
    m_samples: usize,
    seed: u64,
    warp_cfg: WarpConfig,
) -> Result<OrbitStats<T>> {
    let orbit = warp_orbit(img, spec, base, warp_cfg)?;
    let per_point: Vec<(T, T, usize)> = orbit
        .par_iter()
        .enumerate()
        .map(|(k, x)| {
            let rows = mc_forward(model, x, m_samples, mix(seed, &[k as u64]))?;
            let inv_m = T::one() / T::of(rows.len() as f64);
            let mut energy = T::zero();
            for row in &rows {
                energy += total_energy(row)? * inv_m;
            }
            let entropy = predictive_entropy(&rows)?;
            let label = top1(&model.evaluate(x, None)?);
            Ok((energy, entropy, label))
        })
        .collect::<Result<_>>()?;

    let mut values = Vec::with_capacity(per_point.len());
    let mut entropies = Vec::with_capacity(per_point.len());
    let mut labels = Vec::with_capacity(per_point.len());
    for (e, h, l) in per_point {
        values.push(e);
        entropies.push(h);
        labels.push(l);
    }
    Ok(OrbitStats {
        profile: EnergyProfile::new(*spec, *base, values)?,
        entropies,
        labels,
    })
}

/// The energy half of [`orbit_stats`], for callers that need nothing else.
pub fn orbit_energy_profile<T: Real>(
    model: &dyn LogitModel<T>,
    img: &Image<T>,
    spec: &SubgroupSpec<T>,
    base: &AffineTransform<T>,
    m_samples: usize,
    seed: u64,
    warp_cfg: WarpConfig,
) -> Result<EnergyProfile<T>> {
    Ok(orbit_stats(model, img, spec, base, m_samples, seed, warp_cfg)?.profile)
}

/// Correlate the profile with the kernel. Out-of-range indices clamp to the
/// nearest valid index on bounded orbits and wrap on cyclic ones.
pub fn smooth_profile<T: Real>(
    p: &EnergyProfile<T>,
    kernel: &SmoothingKernel<T>,
) -> Result<EnergyProfile<T>> {
    let n = p.values.len();
    if kernel.len() > n {
        return Err(ItsError::KernelTooLong {
            taps: kernel.len(),
            len: n,
        });
    }
    let half = (kernel.len() / 2) as isize;
    let mut out = Vec::with_capacity(n);
    for k in 0..n as isize {
        let mut acc = T::zero();
        for (t, tap) in kernel.taps().iter().enumerate() {
            let idx = p.resolve(k + t as isize - half);
            acc += *tap * p.values[idx];
        }
        out.push(acc);
    }
    EnergyProfile::new(p.spec, p.base, out)
}

/// Curvature of the (smoothed) energy profile: the central second difference
/// divided by the squared Frobenius step between consecutive generator
/// powers. Canonical poses are energy wells, so the confidence peaks
/// positive there. Border stencils reuse the clamp/wrap rule of
/// [`smooth_profile`]; clamping degenerates the stencil to a one-sided
/// difference, which keeps fabricated curvature at the profile borders at
/// the minimum any in-range padding could produce.
pub fn group_confidence<T: Real>(p_smoothed: &EnergyProfile<T>) -> Result<Vec<T>> {
    let n = p_smoothed.values.len();
    if n < 3 {
        return Err(ItsError::ProfileTooShort { len: n });
    }
    let step_sq = p_smoothed.spec.generator_step_norm_sq()?;
    let v = &p_smoothed.values;
    Ok((0..n as isize)
        .map(|k| {
            let prev = v[p_smoothed.resolve(k - 1)];
            let next = v[p_smoothed.resolve(k + 1)];
            (next + prev - T::of(2.0) * v[k as usize]) / step_sq
        })
        .collect())
}

/// Index of the maximum confidence; ties resolve toward the identity index
/// `(n-1)/2`, then toward the smaller index. `conf` must be nonempty.
pub fn argmax_confidence<T: Real>(conf: &[T]) -> usize {
    assert!(!conf.is_empty(), "confidence vector must be nonempty");
    let center = (conf.len() - 1) / 2;
    let mut best = 0usize;
    for k in 1..conf.len() {
        let better = conf[k] > conf[best]
            || (conf[k] == conf[best]
                && center.abs_diff(k) < center.abs_diff(best));
        if better {
            best = k;
        }
    }
    best
}
