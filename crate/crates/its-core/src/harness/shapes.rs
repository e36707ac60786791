//! Synthetic silhouette dataset: three rotationally asymmetric shapes
//! rendered onto a small grid, with jittered replicas for training
//! templates. Every rendering is upright ("canonical"); pose perturbations
//! are applied separately when a shifted test set is built, never here.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{ItsError, Result};
use crate::image::Image;
use crate::scalar::Real;
use crate::seeding::{mix, uniform_range};

/// The three shape classes, in label order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeClass {
    Arrow,
    LBracket,
    Wedge,
}

pub const SHAPE_CLASSES: [ShapeClass; 3] = [ShapeClass::Arrow, ShapeClass::LBracket, ShapeClass::Wedge];

impl ShapeClass {
    pub fn label(self) -> usize {
        match self {
            ShapeClass::Arrow => 0,
            ShapeClass::LBracket => 1,
            ShapeClass::Wedge => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Arrow => "arrow",
            ShapeClass::LBracket => "l_bracket",
            ShapeClass::Wedge => "wedge",
        }
    }

    /// Silhouette outline in center-origin pixel coordinates (x right,
    /// y down), matching the warp convention. Vertex radii stay ≤ ~9 px so
    /// a jittered rendering survives the default rotation/scale/shear
    /// perturbation ranges inside a 32×32 frame without clipping.
    pub fn polygon(self) -> &'static [(f64, f64)] {
        match self {
            // The arrow rides above the horizontal axis so its half-turn
            // image lands almost entirely on fresh pixels.
            ShapeClass::Arrow => &[
                (-7.5, -5.0),
                (1.0, -5.0),
                (1.0, -7.0),
                (8.5, -3.0),
                (1.0, 1.0),
                (1.0, -1.0),
                (-7.5, -1.0),
            ],
            ShapeClass::LBracket => &[
                (-5.0, -7.0),
                (-1.0, -7.0),
                (-1.0, 3.0),
                (6.0, 3.0),
                (6.0, 6.5),
                (-5.0, 6.5),
            ],
            ShapeClass::Wedge => &[(-7.5, -5.0), (8.0, -2.0), (-3.0, 7.0)],
        }
    }
}

/// Dataset partition a sample belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = ItsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(ItsError::InvalidConfig {
                what: format!("unknown split {other:?} (train|val|test)"),
            }),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ShapeSample<T: Real> {
    pub image: Image<T>,
    pub label: usize,
    pub split: Split,
}

/// Rendering parameters. Defaults give square 32×32 single-channel frames
/// and a small, fast dataset.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ShapesConfig {
    pub side: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
}

impl Default for ShapesConfig {
    fn default() -> Self {
        ShapesConfig {
            side: 32,
            train_per_class: 20,
            val_per_class: 5,
            test_per_class: 25,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ShapesDataset<T: Real> {
    pub side: usize,
    samples: Vec<ShapeSample<T>>,
}

impl<T: Real> ShapesDataset<T> {
    /// Assemble a dataset from loose samples (e.g. read back from disk).
    /// Images must be square, single-channel, and uniformly sized; labels
    /// must name one of the known classes.
    pub fn from_samples(samples: Vec<ShapeSample<T>>) -> Result<Self> {
        let first = samples.first().ok_or_else(|| ItsError::InvalidConfig {
            what: "dataset has no samples".into(),
        })?;
        let side = first.image.height();
        for s in &samples {
            s.image.shape_matches(side, side, 1)?;
            if s.label >= SHAPE_CLASSES.len() {
                return Err(ItsError::ClassOutOfRange {
                    y: s.label,
                    num_classes: SHAPE_CLASSES.len(),
                });
            }
        }
        Ok(ShapesDataset { side, samples })
    }

    pub fn samples(&self) -> &[ShapeSample<T>] {
        &self.samples
    }

    pub fn split_samples(&self, split: Split) -> impl Iterator<Item = &ShapeSample<T>> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn num_classes(&self) -> usize {
        SHAPE_CLASSES.len()
    }

    /// Per-class pixel means over the train split — the only split template
    /// fitting may see, which keeps every fitted model canonical-pose-only.
    pub fn class_templates(&self) -> Result<Vec<Image<T>>> {
        let mut sums: Vec<Image<T>> = (0..self.num_classes())
            .map(|_| Image::zeros(self.side, self.side, 1))
            .collect();
        let mut counts = vec![0usize; self.num_classes()];
        for s in self.split_samples(Split::Train) {
            sums[s.label] = sums[s.label].lin_comb(T::one(), T::one(), &s.image);
            counts[s.label] += 1;
        }
        for (label, count) in counts.iter().enumerate() {
            if *count == 0 {
                return Err(ItsError::InvalidConfig {
                    what: format!("train split has no samples of class {label}"),
                });
            }
            let inv = T::one() / T::of(*count as f64);
            let scaled = sums[label].lin_comb(inv, T::zero(), &sums[label]);
            sums[label] = scaled;
        }
        Ok(sums)
    }
}

/// Even-odd ray-cast point-in-polygon test.
fn inside(px: f64, py: f64, poly: &[(f64, f64)]) -> bool {
    let mut odd = false;
    let n = poly.len();
    for i in 0..n {
        let (x1, y1) = poly[i];
        let (x2, y2) = poly[(i + 1) % n];
        if (y1 > py) != (y2 > py) {
            let x_cross = x1 + (py - y1) * (x2 - x1) / (y2 - y1);
            if px < x_cross {
                odd = !odd;
            }
        }
    }
    odd
}

/// 4×4-supersampled coverage rasterization of a translated polygon.
fn rasterize<T: Real>(
    poly: &[(f64, f64)],
    side: usize,
    dx: f64,
    dy: f64,
    intensity: f64,
) -> Image<T> {
    const SS: usize = 4;
    let half = (side - 1) as f64 / 2.0;
    Image::from_fn(side, side, 1, |r, c, _| {
        let mut hits = 0usize;
        for sr in 0..SS {
            for sc in 0..SS {
                // Subsample positions span the pixel's unit square.
                let x = c as f64 - half - 0.5 + (sc as f64 + 0.5) / SS as f64;
                let y = r as f64 - half - 0.5 + (sr as f64 + 0.5) / SS as f64;
                if inside(x - dx, y - dy, poly) {
                    hits += 1;
                }
            }
        }
        T::of(intensity * hits as f64 / (SS * SS) as f64)
    })
}

/// Render one class at the canonical pose: centered, full intensity.
pub fn render_canonical<T: Real>(class: ShapeClass, side: usize) -> Image<T> {
    rasterize(class.polygon(), side, 0.0, 0.0, 1.0)
}

/// Render the full dataset. Per split and class, sample 0 of the train
/// split is the exact canonical rendering; every other sample jitters the
/// center by ±1 px per axis and scales intensity into [0.8, 1.0]. Each
/// sample's randomness is derived independently from
/// `(seed, class, split, index)`, so the dataset is reproducible and
/// insensitive to generation order.
pub fn render_shapes<T: Real>(cfg: ShapesConfig, seed: u64) -> ShapesDataset<T> {
    let splits = [
        (Split::Train, cfg.train_per_class),
        (Split::Val, cfg.val_per_class),
        (Split::Test, cfg.test_per_class),
    ];
    let mut samples = Vec::new();
    for (split_idx, (split, count)) in splits.iter().enumerate() {
        for class in SHAPE_CLASSES {
            for idx in 0..*count {
                let canonical = *split == Split::Train && idx == 0;
                let image = if canonical {
                    render_canonical(class, cfg.side)
                } else {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix(
                        seed,
                        &[class.label() as u64, split_idx as u64, idx as u64],
                    ));
                    let dx = uniform_range(&mut rng, -1.0, 1.0);
                    let dy = uniform_range(&mut rng, -1.0, 1.0);
                    let intensity = uniform_range(&mut rng, 0.8, 1.0);
                    rasterize(class.polygon(), cfg.side, dx, dy, intensity)
                };
                samples.push(ShapeSample {
                    image,
                    label: class.label(),
                    split: *split,
                });
            }
        }
    }
    ShapesDataset {
        side: cfg.side,
        samples,
    }
}

/// One line of the dataset manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub label: usize,
    pub split: Split,
}

/// Write a JSON-lines manifest: one entry per line.
pub fn write_manifest(entries: &[ManifestEntry], path: &Path) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| ItsError::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = fs::File::open(path).map_err(|e| ItsError::io(path, e))?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ItsError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line).map_err(|e| ItsError::Manifest {
            line: i + 1,
            reason: e.to_string(),
        })?;
        entries.push(entry);
    }
    Ok(entries)
}

/// Read a dataset exported by [`export_dataset`]: the manifest plus every
/// image it names, resolved relative to `dir`.
pub fn load_dataset<T: Real>(dir: &Path) -> Result<ShapesDataset<T>> {
    let entries = read_manifest(&dir.join("manifest.jsonl"))?;
    let mut samples = Vec::with_capacity(entries.len());
    for e in &entries {
        samples.push(ShapeSample {
            image: crate::image::read_png(&dir.join(&e.path))?,
            label: e.label,
            split: e.split,
        });
    }
    ShapesDataset::from_samples(samples)
}

/// Write every sample as a PNG under `dir` plus a `manifest.jsonl`
/// describing them.
pub fn export_dataset<T: Real>(dataset: &ShapesDataset<T>, dir: &Path) -> Result<Vec<ManifestEntry>> {
    fs::create_dir_all(dir).map_err(|e| ItsError::io(dir, e))?;
    let mut entries = Vec::new();
    let mut counters = std::collections::HashMap::new();
    for s in dataset.samples() {
        let class = SHAPE_CLASSES[s.label];
        let n = counters.entry((s.split, s.label)).or_insert(0usize);
        let name = format!("{}_{}_{:03}.png", s.split.name(), class.name(), n);
        *n += 1;
        crate::image::write_png(&s.image, &dir.join(&name))?;
        entries.push(ManifestEntry {
            path: name,
            label: s.label,
            split: s.split,
        });
    }
    write_manifest(&entries, &dir.join("manifest.jsonl"))?;
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{SubgroupKind, SubgroupSpec};
    use crate::model::{top1, LogitModel, TemplateModel};
    use crate::warp::{warp, WarpConfig};

    #[test]
    fn rendering_is_deterministic() {
        let a = render_shapes::<f64>(ShapesConfig::default(), 7);
        let b = render_shapes::<f64>(ShapesConfig::default(), 7);
        assert_eq!(a.samples().len(), b.samples().len());
        for (x, y) in a.samples().iter().zip(b.samples()) {
            assert_eq!(x.image.pixels(), y.image.pixels());
            assert_eq!(x.label, y.label);
            assert_eq!(x.split, y.split);
        }
        let c = render_shapes::<f64>(ShapesConfig::default(), 8);
        assert!(a
            .samples()
            .iter()
            .zip(c.samples())
            .any(|(x, y)| x.image.pixels() != y.image.pixels()));
    }

    #[test]
    fn dataset_has_expected_sizes_and_canonical_leads() {
        let cfg = ShapesConfig::default();
        let d = render_shapes::<f64>(cfg, 3);
        assert_eq!(d.samples().len(), 3 * (20 + 5 + 25));
        assert_eq!(d.split_samples(Split::Train).count(), 60);
        assert_eq!(d.split_samples(Split::Test).count(), 75);
        // First train sample of each class is the exact canonical render.
        for class in SHAPE_CLASSES {
            let first = d
                .split_samples(Split::Train)
                .find(|s| s.label == class.label())
                .unwrap();
            let canonical: Image<f64> = render_canonical(class, cfg.side);
            assert_eq!(first.image.pixels(), canonical.pixels());
        }
    }

    #[test]
    fn half_turn_moves_a_tenth_of_the_arrow_pixels() {
        let side = 32;
        let canonical: Image<f64> = render_canonical(ShapeClass::Arrow, side);
        let half_turn = crate::group::kind_matrix(SubgroupKind::Rotation, std::f64::consts::PI);
        let rotated = warp(&canonical, &half_turn, WarpConfig::default()).unwrap();
        let moved = canonical
            .pixels()
            .iter()
            .zip(rotated.pixels())
            .filter(|(a, b)| (**a - **b).abs() >= 0.5)
            .count();
        assert!(
            moved * 10 >= side * side,
            "only {moved} of {} pixels moved",
            side * side
        );
    }

    #[test]
    fn class_means_classify_every_canonical_render() {
        let d = render_shapes::<f64>(ShapesConfig::default(), 11);
        let model = TemplateModel::new(d.class_templates().unwrap(), 2.0).unwrap();
        for s in d.split_samples(Split::Train) {
            let predicted = top1(&model.evaluate(&s.image, None).unwrap());
            assert_eq!(predicted, s.label);
        }
    }

    #[test]
    fn no_shape_sits_still_under_any_sampled_rotation() {
        let spec = SubgroupSpec::<f64>::new(SubgroupKind::Rotation, std::f64::consts::PI, 17).unwrap();
        for class in SHAPE_CLASSES {
            let canonical: Image<f64> = render_canonical(class, 32);
            for j in spec.exponents() {
                if j == 0 {
                    continue;
                }
                let rotated = warp(
                    &canonical,
                    &spec.element_at(j).unwrap(),
                    WarpConfig::default(),
                )
                .unwrap();
                let mad = canonical.mean_abs_diff(&rotated);
                assert!(
                    mad > 0.01,
                    "{} under exponent {j} barely moved (mad {mad})",
                    class.name()
                );
            }
        }
    }

    #[test]
    fn jittered_replicas_stay_inside_the_frame() {
        // Pixels on the outer 2-px ring must stay empty, leaving room for
        // the default perturbation ranges to act without clipping.
        let d = render_shapes::<f64>(ShapesConfig::default(), 19);
        for s in d.samples() {
            let side = d.side;
            for r in 0..side {
                for c in 0..side {
                    if r >= 2 && r < side - 2 && c >= 2 && c < side - 2 {
                        continue;
                    }
                    assert_eq!(s.image.get(r, c, 0), 0.0, "content at rim ({r},{c})");
                }
            }
        }
    }

    #[test]
    fn manifest_round_trips() {
        let dir = std::env::temp_dir().join(format!("its_shapes_{}", std::process::id()));
        let d = render_shapes::<f64>(
            ShapesConfig {
                side: 32,
                train_per_class: 2,
                val_per_class: 1,
                test_per_class: 1,
            },
            5,
        );
        let entries = export_dataset(&d, &dir).unwrap();
        assert_eq!(entries.len(), 12);
        let back = read_manifest(&dir.join("manifest.jsonl")).unwrap();
        assert_eq!(back, entries);
        // Images survive the PNG round trip at 8-bit tolerance.
        let loaded: ShapesDataset<f64> = load_dataset(&dir).unwrap();
        assert_eq!(loaded.samples().len(), d.samples().len());
        for (a, b) in loaded.samples().iter().zip(d.samples()) {
            assert!(a.image.mean_abs_diff(&b.image) < 1.0 / 255.0);
            assert_eq!(a.label, b.label);
            assert_eq!(a.split, b.split);
        }
        std::fs::remove_dir_all(&dir).ok();
    }
}
