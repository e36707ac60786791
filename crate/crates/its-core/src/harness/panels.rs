//! Visual strips: the input image, its state after each search level's
//! adopted undo step, and the final canonicalization, side by side in one
//! PNG.

use std::path::Path;

use crate::error::Result;
use crate::group::AffineTransform;
use crate::image::{write_png, Image};
use crate::scalar::Real;
use crate::search::{Hypothesis, LayerStack};
use crate::warp::{warp, WarpConfig};

const SEPARATOR_PX: usize = 2;

/// Cumulative transform after folding the hypothesis's adopted steps
/// through `level` (inclusive), in the same orientation the search builds:
/// each adopted element premultiplies what came before.
fn prefix_transform<T: Real>(
    stack: &LayerStack<T>,
    hyp: &Hypothesis<T>,
    level: usize,
) -> Result<AffineTransform<T>> {
    let mut acc = AffineTransform::identity();
    for step in hyp.trajectory.iter().filter(|s| s.level <= level && s.adopted) {
        let element = stack.layers()[step.level].element_at(step.exponent)?;
        acc = AffineTransform::compose(&element, &acc);
    }
    Ok(acc)
}

/// Horizontal tile strip with white separators: input, one tile per search
/// level, then the final canonicalization. A depth-3 search yields 5 tiles.
pub fn render_panel<T: Real>(
    input: &Image<T>,
    stack: &LayerStack<T>,
    incumbent: &Hypothesis<T>,
    warp_cfg: WarpConfig,
) -> Result<Image<T>> {
    let depth = stack.depth();
    let mut tiles = Vec::with_capacity(depth + 2);
    tiles.push(input.clone());
    for level in 0..depth {
        let t = prefix_transform(stack, incumbent, level)?;
        tiles.push(warp(input, &t, warp_cfg)?);
    }
    tiles.push(warp(input, &incumbent.cumulative, warp_cfg)?);

    let (h, w, c) = (input.height(), input.width(), input.channels());
    let total_w = tiles.len() * w + (tiles.len() - 1) * SEPARATOR_PX;
    let mut out = Image::from_fn(h, total_w, c, |_, _, _| T::one());
    for (i, tile) in tiles.iter().enumerate() {
        let x0 = i * (w + SEPARATOR_PX);
        for r in 0..h {
            for col in 0..w {
                for ch in 0..c {
                    out.set(r, x0 + col, ch, tile.get(r, col, ch));
                }
            }
        }
    }
    Ok(out)
}

/// Render and write the strip in one step.
pub fn emit_panel<T: Real>(
    input: &Image<T>,
    stack: &LayerStack<T>,
    incumbent: &Hypothesis<T>,
    warp_cfg: WarpConfig,
    path: &Path,
) -> Result<()> {
    let panel = render_panel(input, stack, incumbent, warp_cfg)?;
    write_png(&panel, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::shapes::{render_shapes, ShapesConfig, Split};
    use crate::model::TemplateModel;
    use crate::search::{its_search, SearchConfig};

    #[test]
    fn depth_three_strip_has_five_tiles() {
        let d = render_shapes::<f64>(
            ShapesConfig {
                side: 32,
                train_per_class: 2,
                val_per_class: 1,
                test_per_class: 1,
            },
            2,
        );
        let model = TemplateModel::new(d.class_templates().unwrap(), 2.0).unwrap();
        let img = &d.split_samples(Split::Test).next().unwrap().image;
        let stack = LayerStack::<f64>::its3();
        let mut cfg = SearchConfig::new(stack.clone());
        cfg.k = 1;
        cfg.m_samples = 1;
        let result = its_search(&model, img, &cfg).unwrap();
        let panel = render_panel(img, &stack, result.incumbent(), cfg.warp).unwrap();
        assert_eq!(panel.height(), 32);
        assert_eq!(panel.width(), 5 * 32 + 4 * SEPARATOR_PX);
        // Separator columns are solid white.
        for r in 0..32 {
            assert_eq!(panel.get(r, 32, 0), 1.0);
            assert_eq!(panel.get(r, 33, 0), 1.0);
        }
        // First tile is the input itself.
        for r in 0..32 {
            for c in 0..32 {
                assert_eq!(panel.get(r, c, 0), img.get(r, c, 0));
            }
        }
        // Last tile is the full canonicalization.
        let canonical = warp(img, &result.incumbent().cumulative, cfg.warp).unwrap();
        let x0 = 4 * (32 + SEPARATOR_PX);
        for r in 0..32 {
            for c in 0..32 {
                assert_eq!(panel.get(r, x0 + c, 0), canonical.get(r, c, 0));
            }
        }
        let path = std::env::temp_dir().join(format!("its_panel_{}.png", std::process::id()));
        emit_panel(img, &stack, result.incumbent(), cfg.warp, &path).unwrap();
        assert!(path.exists());
        std::fs::remove_file(&path).ok();
    }
}
