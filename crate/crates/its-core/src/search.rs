//! Layered beam search for the transform that straightens an input.
//!
//! The search walks a fixed stack of sampled subgroups. At each level every
//! surviving hypothesis sweeps one orbit on top of its accumulated
//! transform, scores each orbit point with the configured confidence
//! measure, and the pooled candidates are cut back to the `k` best — at most
//! one per predicted label when `unique_labels` is set, so rival class
//! explanations stay in play instead of the beam collapsing onto near-copies
//! of the leader. A candidate's element is folded into the accumulated
//! transform only when its confidence beats the best confidence that
//! hypothesis has ever seen; otherwise the step is logged and the transform
//! kept, so a level that cannot improve on an earlier pose never degrades
//! it. After the last level the hypotheses are ranked by final confidence or
//! by class support (how often each hypothesis's final label won across
//! everything it evaluated), and the input is warped once by the winner.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::confidence::{
    argmax_confidence, group_confidence, orbit_stats, smooth_profile, EnergyProfile,
    SmoothingKernel,
};
use crate::error::{ItsError, Result};
use crate::group::{AffineTransform, SubgroupKind, SubgroupSpec};
use crate::image::Image;
use crate::model::{top1, LogitModel};
use crate::scalar::Real;
use crate::seeding::mix;
use crate::warp::{warp, WarpConfig};

/// Ordered subgroup layers, searched first to last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LayerStack<T: Real> {
    layers: Vec<SubgroupSpec<T>>,
}

impl<T: Real> LayerStack<T> {
    /// Layers must be nonempty and each must hold more than the identity.
    pub fn new(layers: Vec<SubgroupSpec<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(ItsError::EmptyStack);
        }
        for (index, spec) in layers.iter().enumerate() {
            if spec.generator_step_norm_sq().is_err() {
                return Err(ItsError::DegenerateLayer { index });
            }
        }
        Ok(LayerStack { layers })
    }

    /// Full-circle rotation, then iso-scale, then horizontal shear; 17
    /// samples each.
    pub fn its3() -> Self {
        LayerStack {
            layers: vec![
                SubgroupSpec::new(SubgroupKind::Rotation, T::PI(), 17).expect("static"),
                SubgroupSpec::new(SubgroupKind::IsoScale, T::of(0.25), 17).expect("static"),
                SubgroupSpec::new(SubgroupKind::ShearX, T::of(0.25), 17).expect("static"),
            ],
        }
    }

    /// [`its3`](Self::its3) followed by a second rotation and iso-scale
    /// pass, to clean up what the first pair left behind.
    pub fn its5() -> Self {
        let mut stack = Self::its3();
        stack
            .layers
            .push(SubgroupSpec::new(SubgroupKind::Rotation, T::PI(), 17).expect("static"));
        stack
            .layers
            .push(SubgroupSpec::new(SubgroupKind::IsoScale, T::of(0.25), 17).expect("static"));
        stack
    }

    pub fn layers(&self) -> &[SubgroupSpec<T>] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }
}

impl<T: Real> fmt::Display for LayerStack<T> {
    /// The inverse of [`FromStr`]: `kind:bound:n` triples joined by commas,
    /// with a full-circle rotation bound rendered as `pi`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, spec) in self.layers.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            let bound = spec.bound.widen();
            if (bound - std::f64::consts::PI).abs() < 1e-12 {
                write!(f, "{}:pi:{}", spec.kind.label(), spec.n)?;
            } else {
                write!(f, "{}:{}:{}", spec.kind.label(), bound, spec.n)?;
            }
        }
        Ok(())
    }
}

impl<T: Real> FromStr for LayerStack<T> {
    type Err = ItsError;

    /// Grammar: comma-separated `kind:bound:n` triples, e.g.
    /// `rot:pi:17,scale:0.25:17,shearx:0.25:17`. `bound` accepts `pi`,
    /// `pi/<int>`, or a plain float; `kind` uses the short labels
    /// (`rot`, `scale`, `shearx`, `sheary`, `tx`, `ty`, `reflecth`,
    /// `reflectv`).
    fn from_str(s: &str) -> Result<Self> {
        let mut layers = Vec::new();
        for component in s.split(',') {
            let component = component.trim();
            let bad = |reason: &str| ItsError::StackParse {
                component: component.to_string(),
                reason: reason.to_string(),
            };
            let parts: Vec<&str> = component.split(':').collect();
            if parts.len() != 3 {
                return Err(bad("expected kind:bound:n"));
            }
            let kind = SubgroupKind::from_label(parts[0])
                .ok_or_else(|| bad("unknown subgroup kind"))?;
            let bound = parse_bound(parts[1]).ok_or_else(|| bad("unreadable bound"))?;
            let n: usize = parts[2].parse().map_err(|_| bad("unreadable cardinality"))?;
            layers.push(SubgroupSpec::new(kind, T::of(bound), n)?);
        }
        LayerStack::new(layers)
    }
}

fn parse_bound(token: &str) -> Option<f64> {
    if token == "pi" {
        return Some(std::f64::consts::PI);
    }
    if let Some(den) = token.strip_prefix("pi/") {
        let d: f64 = den.parse().ok()?;
        if d > 0.0 {
            return Some(std::f64::consts::PI / d);
        }
        return None;
    }
    token.parse().ok()
}

/// Which per-orbit-point statistic ranks candidates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    /// Curvature of the smoothed energy along the orbit (the default).
    #[default]
    Group,
    /// Negated smoothed energy: prefer the pose the model finds most
    /// familiar.
    Energy,
    /// Negated smoothed predictive entropy: prefer the pose the model is
    /// most decided about.
    Entropy,
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Measure::Group => "group",
            Measure::Energy => "energy",
            Measure::Entropy => "entropy",
        })
    }
}

impl FromStr for Measure {
    type Err = ItsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "group" => Ok(Measure::Group),
            "energy" => Ok(Measure::Energy),
            "entropy" => Ok(Measure::Entropy),
            other => Err(ItsError::InvalidConfig {
                what: format!("unknown measure {other:?} (group|energy|entropy)"),
            }),
        }
    }
}

/// How the finished hypotheses are ranked.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalPolicy {
    /// Best confidence ever seen (the default).
    #[default]
    Confidence,
    /// How often the hypothesis's final label was the top-1 prediction
    /// across everything it evaluated; confidence breaks ties.
    ClassSupport,
}

impl fmt::Display for FinalPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FinalPolicy::Confidence => "confidence",
            FinalPolicy::ClassSupport => "class_support",
        })
    }
}

impl FromStr for FinalPolicy {
    type Err = ItsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "confidence" => Ok(FinalPolicy::Confidence),
            "class_support" | "class-support" | "support" => Ok(FinalPolicy::ClassSupport),
            other => Err(ItsError::InvalidConfig {
                what: format!("unknown final policy {other:?} (confidence|class_support)"),
            }),
        }
    }
}

/// One level of one hypothesis's walk: which exponent was taken and whether
/// its element was folded into the cumulative transform.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub level: usize,
    pub exponent: i64,
    pub adopted: bool,
}

/// One line of search: an accumulated transform plus the bookkeeping that
/// ranks it.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Hypothesis<T: Real> {
    pub id: usize,
    /// Composition of every adopted element, later levels on the left.
    pub cumulative: AffineTransform<T>,
    /// Noise-free top-1 label at the hypothesis's current pose.
    pub label: usize,
    /// Confidence of the most recent step.
    pub confidence: T,
    /// Highest confidence over the whole walk; a new element is adopted only
    /// by beating it.
    pub best_confidence_seen: T,
    pub trajectory: Vec<TrajectoryStep>,
    /// `support[c]` counts how often class `c` was the noise-free top-1
    /// across every orbit point this line of search evaluated.
    pub support: Vec<usize>,
}

impl<T: Real> Hypothesis<T> {
    fn root(label: usize) -> Self {
        Hypothesis {
            id: 0,
            cumulative: AffineTransform::identity(),
            label,
            confidence: T::zero(),
            best_confidence_seen: T::zero(),
            trajectory: Vec::new(),
            support: Vec::new(),
        }
    }

    fn add_support(&mut self, label: usize) {
        if label >= self.support.len() {
            self.support.resize(label + 1, 0);
        }
        self.support[label] += 1;
    }

    pub fn support_for(&self, label: usize) -> usize {
        self.support.get(label).copied().unwrap_or(0)
    }

    /// Rebuild the cumulative transform from the trajectory (adopted steps
    /// composed in order, later levels on the left). The result must match
    /// the stored matrix; [`its_search`] debug-asserts it to 1e-12.
    pub fn recompose(&self, stack: &LayerStack<T>) -> Result<AffineTransform<T>> {
        let mut acc = AffineTransform::identity();
        for step in &self.trajectory {
            let spec = stack.layers().get(step.level).ok_or(ItsError::IndexOutOfBounds {
                k: step.level,
                len: stack.depth(),
            })?;
            if step.adopted {
                acc = spec.element_at(step.exponent)?.compose(&acc);
            }
        }
        Ok(acc)
    }
}

/// Everything [`its_search`] needs beyond the image and the model.
#[derive(Clone, Debug)]
pub struct SearchConfig<T: Real> {
    pub stack: LayerStack<T>,
    /// Beam width: hypotheses kept per level.
    pub k: usize,
    /// Stochastic forward passes per orbit point.
    pub m_samples: usize,
    pub measure: Measure,
    pub kernel: SmoothingKernel<T>,
    /// Keep at most one hypothesis per predicted label while distinct labels
    /// last.
    pub unique_labels: bool,
    pub final_policy: FinalPolicy,
    pub seed: u64,
    pub warp: WarpConfig,
}

impl<T: Real> SearchConfig<T> {
    pub fn new(stack: LayerStack<T>) -> Self {
        SearchConfig {
            stack,
            k: 3,
            m_samples: 50,
            measure: Measure::Group,
            kernel: SmoothingKernel::default(),
            unique_labels: true,
            final_policy: FinalPolicy::Confidence,
            seed: 0,
            warp: WarpConfig::default(),
        }
    }
}

/// An orbit point proposed for the next beam, still tied to its parent.
#[derive(Clone, Copy, Debug)]
pub struct Candidate<T: Real> {
    /// Index of the parent in the current beam.
    pub parent: usize,
    pub parent_id: usize,
    pub exponent: i64,
    pub confidence: T,
    /// Noise-free top-1 label of the warped orbit point.
    pub label: usize,
}

/// One hypothesis × one level: the measured orbit and what was taken from
/// it.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LevelRecord<T: Real> {
    pub level: usize,
    pub hypothesis_id: usize,
    /// Raw MC-mean energies, orbit order.
    pub energy: Vec<T>,
    /// Kernel-smoothed statistic the measure consumed.
    pub smoothed: Vec<T>,
    pub confidence: Vec<T>,
    /// Exponent of this parent's best surviving child — or of the in-orbit
    /// confidence argmax when no child survived selection.
    pub chosen_exponent: i64,
    pub chosen_confidence: T,
}

/// The output of one full expansion of a hypothesis at one level.
pub struct Expansion<T: Real> {
    pub energy: Vec<T>,
    pub smoothed: Vec<T>,
    pub confidence: Vec<T>,
    pub candidates: Vec<Candidate<T>>,
}

/// Sweep `spec`'s orbit on top of `hyp.cumulative`, score every point with
/// the configured measure, and emit one candidate per point. Every orbit
/// point's noise-free label is folded into `hyp.support`.
pub fn expand_level<T: Real>(
    model: &dyn LogitModel<T>,
    img: &Image<T>,
    hyp: &mut Hypothesis<T>,
    parent_index: usize,
    spec: &SubgroupSpec<T>,
    cfg: &SearchConfig<T>,
    level_seed: u64,
) -> Result<Expansion<T>> {
    let stats = orbit_stats(
        model,
        img,
        spec,
        &hyp.cumulative,
        cfg.m_samples,
        level_seed,
        cfg.warp,
    )?;

    // The measure consumes a kernel-smoothed per-point statistic: the energy
    // for `group` and `energy`, the predictive entropy for `entropy`.
    let raw = match cfg.measure {
        Measure::Group | Measure::Energy => stats.profile.clone(),
        Measure::Entropy => {
            EnergyProfile::new(stats.profile.spec, stats.profile.base, stats.entropies.clone())?
        }
    };
    let smoothed = smooth_profile(&raw, &cfg.kernel)?;
    let confidence = match cfg.measure {
        Measure::Group => group_confidence(&smoothed)?,
        Measure::Energy | Measure::Entropy => smoothed.values.iter().map(|v| -*v).collect(),
    };

    for &label in &stats.labels {
        hyp.add_support(label);
    }

    let candidates = spec
        .exponents()
        .enumerate()
        .map(|(i, j)| Candidate {
            parent: parent_index,
            parent_id: hyp.id,
            exponent: j,
            confidence: confidence[i],
            label: stats.labels[i],
        })
        .collect();

    Ok(Expansion {
        energy: stats.profile.values,
        smoothed: smoothed.values,
        confidence,
        candidates,
    })
}

/// Sort candidates best-first with a total, deterministic order: confidence
/// descending, then nearer the identity exponent, then the lower exponent,
/// then the lower parent id.
fn rank_candidates<T: Real>(candidates: &mut [Candidate<T>]) {
    candidates.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .expect("confidences are finite")
            .then(a.exponent.abs().cmp(&b.exponent.abs()))
            .then(a.exponent.cmp(&b.exponent))
            .then(a.parent_id.cmp(&b.parent_id))
    });
}

/// Cut the pooled candidates down to at most `k` new hypotheses.
///
/// With `unique_labels` set, the best candidate of each distinct label wins
/// first; if fewer than `k` labels exist, the leftovers fill by plain
/// confidence order. A winning candidate's element is composed into the
/// parent transform only when its confidence beats the parent's best ever;
/// otherwise the step is recorded and the parent pose (and label) carry
/// over.
pub fn select_beam<T: Real>(
    mut candidates: Vec<Candidate<T>>,
    parents: &[Hypothesis<T>],
    spec: &SubgroupSpec<T>,
    k: usize,
    unique_labels: bool,
    level: usize,
    next_id: &mut usize,
) -> Result<Vec<Hypothesis<T>>> {
    if candidates.is_empty() {
        return Err(ItsError::InvalidConfig {
            what: "beam selection got no candidates".to_string(),
        });
    }
    rank_candidates(&mut candidates);

    let mut picked: Vec<usize> = Vec::with_capacity(k);
    if unique_labels {
        let mut labels_taken: HashSet<usize> = HashSet::new();
        for (i, c) in candidates.iter().enumerate() {
            if picked.len() == k {
                break;
            }
            if labels_taken.insert(c.label) {
                picked.push(i);
            }
        }
    }
    if picked.len() < k {
        for i in 0..candidates.len() {
            if picked.len() == k {
                break;
            }
            if !picked.contains(&i) {
                picked.push(i);
            }
        }
        // Keep the beam in global rank order after the fill.
        picked.sort_unstable();
    }

    let mut beam = Vec::with_capacity(picked.len());
    for i in picked {
        let c = &candidates[i];
        let parent = &parents[c.parent];
        let adopted = c.confidence > parent.best_confidence_seen;
        let (cumulative, label) = if adopted {
            (spec.element_at(c.exponent)?.compose(&parent.cumulative), c.label)
        } else {
            (parent.cumulative, parent.label)
        };
        let mut trajectory = parent.trajectory.clone();
        trajectory.push(TrajectoryStep {
            level,
            exponent: c.exponent,
            adopted,
        });
        beam.push(Hypothesis {
            id: *next_id,
            cumulative,
            label,
            confidence: c.confidence,
            best_confidence_seen: parent.best_confidence_seen.max(c.confidence),
            trajectory,
            support: parent.support.clone(),
        });
        *next_id += 1;
    }
    Ok(beam)
}

/// What the search hands back: the ranked beam, the canonical image, and
/// the per-level working.
#[derive(Clone, Debug)]
pub struct SearchResult<T: Real> {
    /// All surviving hypotheses, best first under the final policy.
    pub ranked: Vec<Hypothesis<T>>,
    /// The original input warped once by the winner's cumulative transform.
    pub canonical_image: Image<T>,
    /// Seeded stochastic forward passes issued (M per orbit point).
    pub evaluations: usize,
    pub per_level: Vec<LevelRecord<T>>,
}

impl<T: Real> SearchResult<T> {
    pub fn incumbent(&self) -> &Hypothesis<T> {
        &self.ranked[0]
    }
}

fn rank_hypotheses<T: Real>(hyps: &mut [Hypothesis<T>], policy: FinalPolicy) {
    match policy {
        FinalPolicy::Confidence => hyps.sort_by(|a, b| {
            b.best_confidence_seen
                .partial_cmp(&a.best_confidence_seen)
                .expect("confidences are finite")
                .then(a.id.cmp(&b.id))
        }),
        FinalPolicy::ClassSupport => hyps.sort_by(|a, b| {
            b.support_for(b.label)
                .cmp(&a.support_for(a.label))
                .then(
                    b.best_confidence_seen
                        .partial_cmp(&a.best_confidence_seen)
                        .expect("confidences are finite"),
                )
                .then(a.id.cmp(&b.id))
        }),
    }
}

/// Run the full layered search and warp the input by the winning transform.
///
/// Noise seeds derive from `(cfg.seed, level, hypothesis id, orbit index,
/// pass index)`, so the result is bit-reproducible for identical inputs and
/// independent of any parallel schedule.
pub fn its_search<T: Real>(
    model: &dyn LogitModel<T>,
    img: &Image<T>,
    cfg: &SearchConfig<T>,
) -> Result<SearchResult<T>> {
    if cfg.k == 0 {
        return Err(ItsError::InvalidConfig {
            what: "beam width k must be at least 1".to_string(),
        });
    }
    if cfg.m_samples == 0 {
        return Err(ItsError::InvalidConfig {
            what: "need at least one stochastic pass per orbit point".to_string(),
        });
    }
    if cfg.stack.depth() == 0 {
        return Err(ItsError::EmptyStack);
    }

    // Uncounted bookkeeping pass: the root's starting label.
    let root_label = top1(&model.evaluate(img, None)?);
    let mut hyps = vec![Hypothesis::root(root_label)];
    let mut next_id = 1usize;
    let mut evaluations = 0usize;
    let mut per_level = Vec::new();

    for (level, spec) in cfg.stack.layers().iter().enumerate() {
        let mut pooled: Vec<Candidate<T>> = Vec::with_capacity(hyps.len() * spec.n);
        let mut expansions: Vec<(usize, Vec<T>, Vec<T>, Vec<T>)> = Vec::with_capacity(hyps.len());
        for parent_index in 0..hyps.len() {
            let seed = mix(cfg.seed, &[level as u64, hyps[parent_index].id as u64]);
            let exp = expand_level(
                model,
                img,
                &mut hyps[parent_index],
                parent_index,
                spec,
                cfg,
                seed,
            )?;
            evaluations += cfg.m_samples * spec.n;
            expansions.push((
                hyps[parent_index].id,
                exp.energy,
                exp.smoothed,
                exp.confidence,
            ));
            pooled.extend(exp.candidates);
        }

        let beam = select_beam(
            pooled,
            &hyps,
            spec,
            cfg.k,
            cfg.unique_labels,
            level,
            &mut next_id,
        )?;

        for (parent_index, (hypothesis_id, energy, smoothed, confidence)) in
            expansions.into_iter().enumerate()
        {
            // The parent's best surviving child, if any, defines the chosen
            // exponent; a parent whose children all lost records what it
            // would have taken greedily. Children are recognized by their
            // trajectory prefix, which is unique per parent.
            let best_child = beam.iter().find(|h| {
                h.trajectory.len() == level + 1
                    && h.trajectory[..level] == hyps[parent_index].trajectory[..]
            });
            let (chosen_exponent, chosen_confidence) = match best_child {
                Some(h) => {
                    let last = h.trajectory.last().expect("children have a last step");
                    (last.exponent, h.confidence)
                }
                None => {
                    let i = argmax_confidence(&confidence);
                    (
                        spec.exponents().nth(i).expect("index in range"),
                        confidence[i],
                    )
                }
            };
            per_level.push(LevelRecord {
                level,
                hypothesis_id,
                energy,
                smoothed,
                confidence,
                chosen_exponent,
                chosen_confidence,
            });
        }

        hyps = beam;
    }

    rank_hypotheses(&mut hyps, cfg.final_policy);

    #[cfg(debug_assertions)]
    for h in &hyps {
        let recomposed = h.recompose(&cfg.stack)?;
        debug_assert!(
            h.cumulative.approx_eq(&recomposed, T::of(1e-12)),
            "stored transform drifted from its trajectory"
        );
    }

    let canonical_image = warp(img, &hyps[0].cumulative, cfg.warp)?;
    Ok(SearchResult {
        ranked: hyps,
        canonical_image,
        evaluations,
        per_level,
    })
}

/// Per-hypothesis summary plus whether ranking by class support would
/// replace the confidence leader.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ChangeOfMindReport<T: Real> {
    pub entries: Vec<ChangeOfMindEntry<T>>,
    /// True when the support ranking's leader differs from the confidence
    /// ranking's leader.
    pub swapped: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ChangeOfMindEntry<T: Real> {
    pub id: usize,
    pub label: usize,
    pub confidence: T,
    pub support: usize,
}

pub fn change_of_mind_report<T: Real>(result: &SearchResult<T>) -> Result<ChangeOfMindReport<T>> {
    if result.ranked.len() < 2 {
        return Err(ItsError::InvalidConfig {
            what: "change-of-mind comparison needs at least two hypotheses".to_string(),
        });
    }
    let entries: Vec<ChangeOfMindEntry<T>> = result
        .ranked
        .iter()
        .map(|h| ChangeOfMindEntry {
            id: h.id,
            label: h.label,
            confidence: h.best_confidence_seen,
            support: h.support_for(h.label),
        })
        .collect();

    let mut by_confidence = result.ranked.clone();
    rank_hypotheses(&mut by_confidence, FinalPolicy::Confidence);
    let mut by_support = result.ranked.clone();
    rank_hypotheses(&mut by_support, FinalPolicy::ClassSupport);
    Ok(ChangeOfMindReport {
        entries,
        swapped: by_confidence[0].id != by_support[0].id,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::confidence::orbit_energy_profile;
    use crate::model::TemplateModel;

    fn poked_image(side: usize) -> Image<f64> {
        Image::from_fn(side, side, 1, |r, c, _| {
            if (4..9).contains(&r) && (14..19).contains(&c) {
                1.0
            } else {
                0.0
            }
        })
    }

    fn bar_image(side: usize) -> Image<f64> {
        Image::from_fn(side, side, 1, |r, c, _| {
            let mid = side / 2;
            if r.abs_diff(mid) <= 1 && (3..side - 3).contains(&c) {
                1.0
            } else {
                0.0
            }
        })
    }

    fn rot17() -> SubgroupSpec<f64> {
        SubgroupSpec::new(SubgroupKind::Rotation, std::f64::consts::PI, 17).unwrap()
    }

    fn shear17() -> SubgroupSpec<f64> {
        SubgroupSpec::new(SubgroupKind::ShearX, 0.25, 17).unwrap()
    }

    /// Deterministic single-pass config; keeps the default Gaussian kernel,
    /// which the group measure needs to stay well-behaved — unsmoothed
    /// second differences at badly mismatched poses are jagged enough to
    /// out-shout a genuine energy well.
    fn quiet_config(stack: LayerStack<f64>) -> SearchConfig<f64> {
        let mut cfg = SearchConfig::new(stack);
        cfg.m_samples = 1;
        cfg
    }

    fn cand(parent_id: usize, exponent: i64, confidence: f64, label: usize) -> Candidate<f64> {
        Candidate {
            parent: parent_id,
            parent_id,
            exponent,
            confidence,
            label,
        }
    }

    #[test]
    fn stack_grammar_round_trips() {
        let s = "rot:pi:17,scale:0.25:17,shearx:0.25:17";
        let stack: LayerStack<f64> = s.parse().unwrap();
        assert_eq!(stack.depth(), 3);
        assert_eq!(stack.to_string(), s);
        assert_eq!(stack, LayerStack::its3());

        let five = LayerStack::<f64>::its5();
        assert_eq!(five.depth(), 5);
        let reparsed: LayerStack<f64> = five.to_string().parse().unwrap();
        assert_eq!(reparsed, five);

        let frac: LayerStack<f64> = "rot:pi/4:9".parse().unwrap();
        assert!((frac.layers()[0].bound - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
    }

    #[test]
    fn stack_grammar_rejects_garbage() {
        assert!(matches!(
            "rot:pi".parse::<LayerStack<f64>>(),
            Err(ItsError::StackParse { .. })
        ));
        assert!(matches!(
            "spin:pi:17".parse::<LayerStack<f64>>(),
            Err(ItsError::StackParse { .. })
        ));
        assert!(matches!(
            "rot:pi/x:17".parse::<LayerStack<f64>>(),
            Err(ItsError::StackParse { .. })
        ));
        assert!(matches!(
            "rot:pi:16".parse::<LayerStack<f64>>(),
            Err(ItsError::EvenCardinality { n: 16 })
        ));
        assert!(matches!(
            "".parse::<LayerStack<f64>>(),
            Err(ItsError::StackParse { .. })
        ));
    }

    #[test]
    fn degenerate_layers_are_rejected() {
        assert!(matches!(LayerStack::<f64>::new(vec![]), Err(ItsError::EmptyStack)));
        let flat = SubgroupSpec::new(SubgroupKind::Rotation, 0.0, 5).unwrap();
        assert!(matches!(
            LayerStack::new(vec![rot17(), flat]),
            Err(ItsError::DegenerateLayer { index: 1 })
        ));
    }

    #[test]
    fn measure_and_policy_parse_and_print() {
        for m in [Measure::Group, Measure::Energy, Measure::Entropy] {
            assert_eq!(m.to_string().parse::<Measure>().unwrap(), m);
        }
        for p in [FinalPolicy::Confidence, FinalPolicy::ClassSupport] {
            assert_eq!(p.to_string().parse::<FinalPolicy>().unwrap(), p);
        }
        assert!("vibes".parse::<Measure>().is_err());
    }

    #[test]
    fn beam_takes_best_per_label_then_falls_back() {
        let parents = vec![Hypothesis::<f64>::root(0)];
        let spec = shear17();

        // Labels [5, 5, 9]: unique selection keeps the 0.9 and skips the 0.8
        // twin in favor of the 0.7 with the fresh label.
        let mut next_id = 1;
        let beam = select_beam(
            vec![
                cand(0, -1, 0.9, 5),
                cand(0, 0, 0.8, 5),
                cand(0, 1, 0.7, 9),
            ],
            &parents,
            &spec,
            2,
            true,
            0,
            &mut next_id,
        )
        .unwrap();
        assert_eq!(beam.len(), 2);
        assert_eq!(beam[0].confidence, 0.9);
        assert_eq!(beam[0].label, 5);
        assert_eq!(beam[1].confidence, 0.7);
        assert_eq!(beam[1].label, 9);

        // All candidates share a label: the fallback fills by confidence.
        let mut next_id = 1;
        let beam = select_beam(
            vec![
                cand(0, -1, 0.9, 7),
                cand(0, 0, 0.8, 7),
                cand(0, 1, 0.7, 7),
            ],
            &parents,
            &spec,
            2,
            true,
            0,
            &mut next_id,
        )
        .unwrap();
        assert_eq!(beam.len(), 2);
        assert_eq!(beam[0].confidence, 0.9);
        assert_eq!(beam[1].confidence, 0.8);

        // Without the label constraint the top two win outright.
        let mut next_id = 1;
        let beam = select_beam(
            vec![
                cand(0, -1, 0.9, 5),
                cand(0, 0, 0.8, 5),
                cand(0, 1, 0.7, 9),
            ],
            &parents,
            &spec,
            2,
            false,
            0,
            &mut next_id,
        )
        .unwrap();
        assert_eq!(beam[1].confidence, 0.8);
        assert_eq!(beam[1].label, 5);
    }

    #[test]
    fn confidence_ties_resolve_toward_identity() {
        let parents = vec![Hypothesis::<f64>::root(0)];
        let spec = shear17();
        let mut next_id = 1;
        let beam = select_beam(
            vec![
                cand(0, -3, 0.5, 1),
                cand(0, 0, 0.5, 2),
                cand(0, 2, 0.5, 3),
                cand(0, -2, 0.5, 4),
            ],
            &parents,
            &spec,
            3,
            true,
            0,
            &mut next_id,
        )
        .unwrap();
        let taken: Vec<i64> = beam
            .iter()
            .map(|h| h.trajectory.last().unwrap().exponent)
            .collect();
        assert_eq!(taken, vec![0, -2, 2]);
    }

    #[test]
    fn adoption_requires_beating_the_best_seen() {
        let spec = shear17();
        let mut parent = Hypothesis::<f64>::root(3);
        parent.best_confidence_seen = 0.6;
        parent.cumulative = spec.element_at(2).unwrap();
        parent.label = 3;
        let parents = vec![parent];

        let mut next_id = 1;
        let beam = select_beam(
            vec![cand(0, 5, 0.4, 8), cand(0, -1, 0.9, 9)],
            &parents,
            &spec,
            2,
            true,
            1,
            &mut next_id,
        )
        .unwrap();

        let winner = &beam[0];
        assert!(winner.trajectory.last().unwrap().adopted);
        assert_eq!(winner.label, 9);
        assert_eq!(winner.best_confidence_seen, 0.9);
        assert!(winner
            .cumulative
            .approx_eq(&spec.element_at(-1).unwrap().compose(&parents[0].cumulative), 1e-15));

        let loser = &beam[1];
        assert!(!loser.trajectory.last().unwrap().adopted);
        assert_eq!(loser.label, 3, "non-adopted step keeps the parent's label");
        assert_eq!(loser.confidence, 0.4);
        assert_eq!(loser.best_confidence_seen, 0.6);
        assert!(loser.cumulative.approx_eq(&parents[0].cumulative, 0.0));
    }

    #[test]
    fn depth_one_search_equals_orbit_argmax() {
        let side = 23;
        let img = poked_image(side);
        let templates = vec![img.clone(), bar_image(side)];
        let model = TemplateModel::new(templates, 3.0).unwrap();
        let spec = rot17();

        for start in [-6i64, -2, 0, 3, 7] {
            let perturbed = warp(
                &img,
                &spec.element_at(start).unwrap(),
                WarpConfig::default(),
            )
            .unwrap();

            let mut cfg = quiet_config(LayerStack::new(vec![spec]).unwrap());
            cfg.k = 1;
            let result = its_search(&model, &perturbed, &cfg).unwrap();

            // Independent oracle: exhaustive argmax of the same measure over
            // the same orbit.
            let profile = orbit_energy_profile(
                &model,
                &perturbed,
                &spec,
                &AffineTransform::identity(),
                1,
                mix(cfg.seed, &[0, 0]),
                cfg.warp,
            )
            .unwrap();
            let conf = group_confidence(&smooth_profile(&profile, &cfg.kernel).unwrap()).unwrap();
            let best = argmax_confidence(&conf);
            let want_j = spec.exponents().nth(best).unwrap();

            let got = result.incumbent().trajectory[0];
            assert_eq!(got.exponent, want_j, "start {start}");
            assert_eq!(result.per_level[0].chosen_exponent, want_j);
        }
    }

    #[test]
    fn on_grid_perturbation_is_inverted_exactly() {
        // The observed image is the template sheared, then rotated; both
        // magnitudes sit exactly on the search grids. Undoing outermost
        // first (rotation layer, then shear layer) needs no commutation, so
        // the accumulated transform must match the algebraic inverse to
        // floating-point accuracy.
        let side = 31;
        let template = Image::from_fn(side, side, 1, |r, c, _| {
            if (6..12).contains(&r) && (18..25).contains(&c) {
                1.0
            } else if (14..17).contains(&r) && (8..12).contains(&c) {
                0.6
            } else {
                0.0
            }
        });
        let rot = rot17();
        let shear = shear17();
        let perturbation = rot
            .element_at(4)
            .unwrap()
            .compose(&shear.element_at(4).unwrap());
        let img = warp(&template, &perturbation, WarpConfig::default()).unwrap();

        let model = TemplateModel::new(vec![template, bar_image(side)], 3.0).unwrap();
        // Greedy regime: with one hypothesis the walk follows the orbit
        // argmax at both levels, which sits exactly on the planted grid
        // exponents.
        let mut cfg = quiet_config(LayerStack::new(vec![rot, shear]).unwrap());
        cfg.k = 1;
        let result = its_search(&model, &img, &cfg).unwrap();

        let inverse = perturbation.inverse().unwrap();
        let dist = crate::group::frobenius_distance(&result.incumbent().cumulative, &inverse);
        assert!(
            dist < 1e-6,
            "incumbent is {:?} steps, distance {dist}",
            result.incumbent().trajectory
        );
    }

    #[test]
    fn canonical_input_stays_put() {
        let side = 23;
        let img = poked_image(side);
        let model = TemplateModel::new(vec![img.clone(), bar_image(side)], 3.0).unwrap();
        // Greedy regime: the single hypothesis takes j=0 at every level
        // (by confidence at the well, by the identity tie-break on its
        // plateau), so nothing ever moves.
        let mut cfg = quiet_config(LayerStack::new(vec![rot17(), shear17()]).unwrap());
        cfg.k = 1;

        let result = its_search(&model, &img, &cfg).unwrap();
        assert!(result
            .incumbent()
            .cumulative
            .approx_eq(&AffineTransform::identity(), 0.0));
        // Identity transform means the canonical image is a bit-exact copy.
        assert_eq!(result.canonical_image.pixels(), img.pixels());
    }

    #[test]
    fn evaluation_count_matches_the_closed_form() {
        let side = 23;
        let img = poked_image(side);
        let model = TemplateModel::new(vec![poked_image(side), bar_image(side)], 3.0).unwrap();

        for (depth, k, m) in [(1usize, 1usize, 1usize), (2, 2, 1), (3, 3, 2), (2, 1, 3)] {
            let layers: Vec<SubgroupSpec<f64>> = [rot17(), shear17(), rot17()][..depth].to_vec();
            let n = 17;
            let mut cfg = quiet_config(LayerStack::new(layers).unwrap());
            cfg.k = k;
            cfg.m_samples = m;
            let result = its_search(&model, &img, &cfg).unwrap();
            assert_eq!(
                result.evaluations,
                m * n * (1 + (depth - 1) * k),
                "depth {depth} k {k} m {m}"
            );
            assert_eq!(result.ranked.len(), k);
            assert_eq!(result.per_level.len(), 1 + (depth - 1) * k);
        }
    }

    #[test]
    fn distinct_labels_stay_distinct_in_the_beam() {
        // Three templates are exact warps of one shape at exponents -5, 0,
        // +5 of the rotation layer, so the level-0 orbit contains exact
        // matches for three different classes.
        let side = 23;
        let base = poked_image(side);
        let spec = rot17();
        let make = |j: i64| {
            warp(&base, &spec.element_at(j).unwrap(), WarpConfig::default()).unwrap()
        };
        let model = TemplateModel::new(vec![base.clone(), make(5), make(-5)], 3.0).unwrap();

        let mut cfg = quiet_config(LayerStack::new(vec![spec]).unwrap());
        cfg.k = 3;
        let result = its_search(&model, &base, &cfg).unwrap();

        let mut labels: Vec<usize> = result.ranked.iter().map(|h| h.label).collect();
        labels.sort_unstable();
        labels.dedup();
        assert_eq!(labels.len(), 3, "beam must hold three distinct labels");
    }

    #[test]
    fn search_is_deterministic() {
        let side = 23;
        let img = warp(
            &poked_image(side),
            &rot17().element_at(3).unwrap(),
            WarpConfig::default(),
        )
        .unwrap();
        let model = TemplateModel::new(vec![poked_image(side), bar_image(side)], 3.0).unwrap();
        let mut cfg = quiet_config(LayerStack::new(vec![rot17(), shear17()]).unwrap());
        cfg.k = 2;
        cfg.m_samples = 3;
        cfg.seed = 99;

        let a = its_search(&model, &img, &cfg).unwrap();
        let b = its_search(&model, &img, &cfg).unwrap();
        assert_eq!(a.evaluations, b.evaluations);
        assert_eq!(a.canonical_image.pixels(), b.canonical_image.pixels());
        for (x, y) in a.ranked.iter().zip(&b.ranked) {
            assert_eq!(x.id, y.id);
            assert_eq!(x.cumulative, y.cumulative);
            assert_eq!(x.confidence, y.confidence);
            assert_eq!(x.trajectory, y.trajectory);
            assert_eq!(x.support, y.support);
        }
        for (x, y) in a.per_level.iter().zip(&b.per_level) {
            assert_eq!(x.energy, y.energy);
            assert_eq!(x.confidence, y.confidence);
            assert_eq!(x.chosen_exponent, y.chosen_exponent);
        }
    }

    #[test]
    fn trajectories_recompose_to_the_stored_transform() {
        let side = 23;
        let img = warp(
            &poked_image(side),
            &rot17().element_at(5).unwrap(),
            WarpConfig::default(),
        )
        .unwrap();
        let model = TemplateModel::new(vec![poked_image(side), bar_image(side)], 3.0).unwrap();
        let mut cfg = quiet_config(LayerStack::new(vec![rot17(), shear17(), rot17()]).unwrap());
        cfg.k = 3;
        let result = its_search(&model, &img, &cfg).unwrap();
        for h in &result.ranked {
            assert_eq!(h.trajectory.len(), 3);
            let recomposed = h.recompose(&cfg.stack).unwrap();
            assert!(h.cumulative.approx_eq(&recomposed, 1e-12));
        }
    }

    #[test]
    fn support_counts_every_orbit_point() {
        let side = 23;
        let img = poked_image(side);
        let model = TemplateModel::new(vec![img.clone(), bar_image(side)], 3.0).unwrap();
        let mut cfg = quiet_config(LayerStack::new(vec![rot17(), shear17()]).unwrap());
        cfg.k = 2;
        let result = its_search(&model, &img, &cfg).unwrap();
        for h in &result.ranked {
            // Root level plus one own expansion: 2 orbits of 17 points each.
            let total: usize = h.support.iter().sum();
            assert_eq!(total, 34);
        }
    }

    #[test]
    fn change_of_mind_flags_support_upsets() {
        let mk = |id: usize, label: usize, conf: f64, support_n: usize| {
            let mut h = Hypothesis::<f64>::root(label);
            h.id = id;
            h.best_confidence_seen = conf;
            for _ in 0..support_n {
                h.add_support(label);
            }
            h
        };
        let base = SearchResult {
            ranked: vec![mk(0, 1, 0.9, 4), mk(1, 2, 0.8, 11)],
            canonical_image: Image::<f64>::zeros(2, 2, 1),
            evaluations: 0,
            per_level: vec![],
        };
        let report = change_of_mind_report(&base).unwrap();
        assert!(report.swapped, "support 11 beats 4 and flips the leader");
        assert_eq!(report.entries[0].support, 4);

        let even = SearchResult {
            ranked: vec![mk(0, 1, 0.9, 6), mk(1, 2, 0.8, 6)],
            canonical_image: Image::<f64>::zeros(2, 2, 1),
            evaluations: 0,
            per_level: vec![],
        };
        assert!(
            !change_of_mind_report(&even).unwrap().swapped,
            "equal support falls back to confidence"
        );

        let solo = SearchResult {
            ranked: vec![mk(0, 1, 0.9, 6)],
            canonical_image: Image::<f64>::zeros(2, 2, 1),
            evaluations: 0,
            per_level: vec![],
        };
        assert!(change_of_mind_report(&solo).is_err());
    }

    #[test]
    fn misconfigured_searches_error_out() {
        let img = poked_image(23);
        let model = TemplateModel::new(vec![poked_image(23), bar_image(23)], 1.0).unwrap();
        let mut cfg = quiet_config(LayerStack::new(vec![rot17()]).unwrap());
        cfg.k = 0;
        assert!(matches!(
            its_search(&model, &img, &cfg),
            Err(ItsError::InvalidConfig { .. })
        ));
        let mut cfg = quiet_config(LayerStack::new(vec![rot17()]).unwrap());
        cfg.m_samples = 0;
        assert!(matches!(
            its_search(&model, &img, &cfg),
            Err(ItsError::InvalidConfig { .. })
        ));
    }
}
