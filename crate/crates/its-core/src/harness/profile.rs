//! Wall-clock and forward-pass-count profiling over a grid of search
//! shapes: stack depth × beam width × noise passes.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{ItsError, Result};
use crate::image::Image;
use crate::model::LogitModel;
use crate::scalar::Real;
use crate::search::{its_search, LayerStack, SearchConfig};

/// One profiled configuration. The backbone-only baseline appears as the
/// all-zero configuration with exactly one evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub depth: usize,
    pub k: usize,
    pub m_samples: usize,
    pub evaluations: usize,
    pub wall_ms_mean: f64,
    pub wall_ms_sd: f64,
}

/// Grid to profile. `depths` index prefixes of the stack the profile runs
/// with; use at least 10 repeats for timing figures worth reading.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProfileConfig {
    pub depths: Vec<usize>,
    pub ks: Vec<usize>,
    pub ms: Vec<usize>,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig {
            depths: vec![1, 2, 3],
            ks: vec![1, 2, 3],
            ms: vec![1, 2],
            repeats: 10,
            seed: 0,
        }
    }
}

fn timed<R>(repeats: usize, mut body: impl FnMut() -> Result<R>) -> Result<(R, f64, f64)> {
    let mut samples = Vec::with_capacity(repeats);
    let mut last = None;
    for _ in 0..repeats {
        let start = Instant::now();
        last = Some(body()?);
        samples.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((last.expect("repeats >= 1"), mean, var.sqrt()))
}

/// Time the bare model and every `(depth, k, m)` combination on one image.
/// Evaluation counts come from the search itself and are identical across
/// repeats; rows appear in grid order with the baseline first.
pub fn runtime_profile<T: Real>(
    model: &dyn LogitModel<T>,
    img: &Image<T>,
    stack: &LayerStack<T>,
    cfg: &ProfileConfig,
) -> Result<Vec<ProfileRow>> {
    if cfg.repeats == 0 {
        return Err(ItsError::InvalidConfig {
            what: "profiling needs at least one repeat".into(),
        });
    }
    if cfg.depths.iter().any(|&d| d == 0 || d > stack.depth()) {
        return Err(ItsError::InvalidConfig {
            what: format!(
                "profile depths must lie in 1..={}, got {:?}",
                stack.depth(),
                cfg.depths
            ),
        });
    }
    let mut rows = Vec::new();
    let (_, mean, sd) = timed(cfg.repeats, || model.evaluate(img, None))?;
    rows.push(ProfileRow {
        depth: 0,
        k: 0,
        m_samples: 0,
        evaluations: 1,
        wall_ms_mean: mean,
        wall_ms_sd: sd,
    });
    for &depth in &cfg.depths {
        let prefix = LayerStack::new(stack.layers()[..depth].to_vec())?;
        for &k in &cfg.ks {
            for &m in &cfg.ms {
                let mut search_cfg = SearchConfig::new(prefix.clone());
                search_cfg.k = k;
                search_cfg.m_samples = m;
                search_cfg.seed = cfg.seed;
                let (result, mean, sd) =
                    timed(cfg.repeats, || its_search(model, img, &search_cfg))?;
                rows.push(ProfileRow {
                    depth,
                    k,
                    m_samples: m,
                    evaluations: result.evaluations,
                    wall_ms_mean: mean,
                    wall_ms_sd: sd,
                });
            }
        }
    }
    Ok(rows)
}
