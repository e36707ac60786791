//! Minimal CNN inference engine. The network shape is the small
//! image-classification stack
//!
//! ```text
//! conv(kxk) -> GeLU -> conv(kxk) -> GeLU -> maxpool(2x2)
//!           -> conv(kxk) -> GeLU -> maxpool(2x2)
//!           -> flatten -> linear -> GeLU -> dropout -> linear
//! ```
//!
//! with square valid-padding stride-1 convolutions. Channel counts, kernel
//! size, and the hidden width all come from the weight tensors; the square
//! input size is back-solved from the first linear layer's fan-in, so the
//! shape chain is consistent by construction. Activations are kept planar
//! (channel-outermost), which fixes the flatten order to
//! `index = ch*H*W + r*W + c`.
//!
//! Stochasticity is confined to the single dropout slot after the hidden
//! linear layer: with a noise seed, each hidden unit independently keeps its
//! value with probability `keep_prob` (dropped units become zero, survivors
//! are *not* rescaled); without a seed every mask bit keeps. Mask bits are
//! drawn in ascending unit order from a stream cipher seeded with the noise
//! seed, so a pass is a pure function of `(weights, image, seed)`.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;

use crate::error::{ItsError, Result};
use crate::image::Image;
use crate::model::weights::WeightFile;
use crate::model::{gelu, LogitModel};
use crate::scalar::Real;
use crate::seeding::uniform01;

#[derive(Clone, Copy, Debug)]
pub struct DropoutConfig<T: Real> {
    /// Probability that a hidden unit survives a stochastic pass, in (0, 1].
    pub keep_prob: T,
}

impl<T: Real> Default for DropoutConfig<T> {
    fn default() -> Self {
        DropoutConfig {
            keep_prob: T::of(0.5),
        }
    }
}

/// Channel-outermost activation block: `data[(ch*h + r)*w + c]`.
struct Planar<T> {
    ch: usize,
    h: usize,
    w: usize,
    data: Vec<T>,
}

impl<T: Real> Planar<T> {
    fn zeros(ch: usize, h: usize, w: usize) -> Self {
        Planar {
            ch,
            h,
            w,
            data: vec![T::zero(); ch * h * w],
        }
    }

    fn from_image(img: &Image<T>) -> Self {
        let (h, w, ch) = (img.height(), img.width(), img.channels());
        let mut p = Planar::zeros(ch, h, w);
        for c in 0..ch {
            for r in 0..h {
                for col in 0..w {
                    p.data[(c * h + r) * w + col] = img.get(r, col, c);
                }
            }
        }
        p
    }
}

/// Weights `(out_ch, in_ch, k, k)` row-major plus a per-channel bias.
struct ConvLayer<T> {
    out_ch: usize,
    in_ch: usize,
    k: usize,
    weight: Vec<T>,
    bias: Vec<T>,
}

struct FcLayer<T> {
    out: usize,
    inp: usize,
    weight: Vec<T>,
    bias: Vec<T>,
}

impl<T: Real> FcLayer<T> {
    fn apply(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.inp);
        (0..self.out)
            .map(|o| {
                let row = &self.weight[o * self.inp..(o + 1) * self.inp];
                let mut acc = self.bias[o];
                for (w, v) in row.iter().zip(x) {
                    acc += *w * *v;
                }
                acc
            })
            .collect()
    }
}

fn conv_valid<T: Real>(x: &Planar<T>, l: &ConvLayer<T>) -> Planar<T> {
    debug_assert_eq!(x.ch, l.in_ch);
    let oh = x.h - l.k + 1;
    let ow = x.w - l.k + 1;
    let mut out = Planar::zeros(l.out_ch, oh, ow);
    for oc in 0..l.out_ch {
        for r in 0..oh {
            for c in 0..ow {
                let mut acc = l.bias[oc];
                for ic in 0..l.in_ch {
                    for kr in 0..l.k {
                        let xrow = &x.data[(ic * x.h + r + kr) * x.w + c..][..l.k];
                        let wrow = &l.weight[((oc * l.in_ch + ic) * l.k + kr) * l.k..][..l.k];
                        for (w, v) in wrow.iter().zip(xrow) {
                            acc += *w * *v;
                        }
                    }
                }
                out.data[(oc * oh + r) * ow + c] = acc;
            }
        }
    }
    out
}

fn maxpool2<T: Real>(x: &Planar<T>) -> Planar<T> {
    debug_assert!(x.h % 2 == 0 && x.w % 2 == 0);
    let (oh, ow) = (x.h / 2, x.w / 2);
    let mut out = Planar::zeros(x.ch, oh, ow);
    for c in 0..x.ch {
        for r in 0..oh {
            for col in 0..ow {
                let at = |dr: usize, dc: usize| x.data[(c * x.h + 2 * r + dr) * x.w + 2 * col + dc];
                out.data[(c * oh + r) * ow + col] =
                    at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1));
            }
        }
    }
    out
}

fn gelu_in_place<T: Real>(xs: &mut [T]) {
    for x in xs {
        *x = gelu(*x);
    }
}

/// Per-stage activations of one forward pass, for fixture comparison.
/// Stages, in order: `conv1`, `conv2`, `pool1`, `conv3`, `pool2`, `fc1`,
/// `logits`. Convolution and `fc1` stages are captured *after* their GeLU
/// (and after dropout, if a seed was given).
pub struct CnnTrace<T: Real> {
    pub stages: Vec<(&'static str, Vec<T>)>,
}

pub struct CnnModel<T: Real> {
    conv1: ConvLayer<T>,
    conv2: ConvLayer<T>,
    conv3: ConvLayer<T>,
    fc1: FcLayer<T>,
    fc2: FcLayer<T>,
    dropout: DropoutConfig<T>,
    input_h: usize,
    input_w: usize,
}

impl<T: Real> CnnModel<T> {
    pub fn from_weight_file(wf: &WeightFile<T>, dropout: DropoutConfig<T>) -> Result<Self> {
        if !(dropout.keep_prob > T::zero() && dropout.keep_prob <= T::one()) {
            return Err(ItsError::InvalidConfig {
                what: format!("keep probability must lie in (0, 1], got {}", dropout.keep_prob),
            });
        }
        let conv1 = read_conv(wf, "conv1")?;
        let conv2 = read_conv(wf, "conv2")?;
        let conv3 = read_conv(wf, "conv3")?;
        if conv2.in_ch != conv1.out_ch {
            return Err(wf
                .get("conv2.weight")?
                .shape_error(format!("(out_ch, {}, k, k) to follow conv1", conv1.out_ch)));
        }
        if conv3.in_ch != conv2.out_ch {
            return Err(wf
                .get("conv3.weight")?
                .shape_error(format!("(out_ch, {}, k, k) to follow conv2", conv2.out_ch)));
        }
        let fc1 = read_fc(wf, "fc1")?;
        let fc2 = read_fc(wf, "fc2")?;
        if fc2.inp != fc1.out {
            return Err(wf
                .get("fc2.weight")?
                .shape_error(format!("(classes, {}) to follow fc1", fc1.out)));
        }

        // Walk the shape chain backwards from fc1's fan-in to the square
        // input size: fc1.inp = conv3.out_ch * s^2 where s is the spatial
        // size after the second pool.
        let fc1_tensor = wf.get("fc1.weight")?;
        let spatial_err = || {
            fc1_tensor.shape_error(format!(
                "(hidden, {} * s * s) for an integer spatial size s",
                conv3.out_ch
            ))
        };
        if fc1.inp % conv3.out_ch != 0 {
            return Err(spatial_err());
        }
        let per_ch = fc1.inp / conv3.out_ch;
        let s5 = (per_ch as f64).sqrt().round() as usize;
        if s5 == 0 || s5 * s5 != per_ch {
            return Err(spatial_err());
        }
        let s4 = 2 * s5;
        let s3 = s4 + (conv3.k - 1);
        let s2 = 2 * s3;
        let s1 = s2 + (conv2.k - 1);
        let s0 = s1 + (conv1.k - 1);

        Ok(CnnModel {
            conv1,
            conv2,
            conv3,
            fc1,
            fc2,
            dropout,
            input_h: s0,
            input_w: s0,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_weight_file(&WeightFile::read(path)?, DropoutConfig::default())
    }

    /// Expected input shape as `(height, width, channels)`.
    pub fn input_size(&self) -> (usize, usize, usize) {
        (self.input_h, self.input_w, self.conv1.in_ch)
    }

    pub fn keep_prob(&self) -> T {
        self.dropout.keep_prob
    }

    fn forward(&self, img: &Image<T>, noise_seed: Option<u64>, want_trace: bool) -> Result<(Vec<T>, Option<CnnTrace<T>>)> {
        img.shape_matches(self.input_h, self.input_w, self.conv1.in_ch)?;
        let mut trace = want_trace.then(|| CnnTrace { stages: Vec::with_capacity(7) });
        let record = |name: &'static str, data: &[T], tr: &mut Option<CnnTrace<T>>| {
            if let Some(tr) = tr {
                tr.stages.push((name, data.to_vec()));
            }
        };

        let x0 = Planar::from_image(img);
        let mut a1 = conv_valid(&x0, &self.conv1);
        gelu_in_place(&mut a1.data);
        record("conv1", &a1.data, &mut trace);

        let mut a2 = conv_valid(&a1, &self.conv2);
        gelu_in_place(&mut a2.data);
        record("conv2", &a2.data, &mut trace);

        let p1 = maxpool2(&a2);
        record("pool1", &p1.data, &mut trace);

        let mut a3 = conv_valid(&p1, &self.conv3);
        gelu_in_place(&mut a3.data);
        record("conv3", &a3.data, &mut trace);

        let p2 = maxpool2(&a3);
        record("pool2", &p2.data, &mut trace);

        let mut hidden = self.fc1.apply(&p2.data);
        gelu_in_place(&mut hidden);
        if let Some(seed) = noise_seed {
            let keep = self.dropout.keep_prob.widen();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for unit in hidden.iter_mut() {
                if uniform01(&mut rng) >= keep {
                    *unit = T::zero();
                }
            }
        }
        record("fc1", &hidden, &mut trace);

        let logits = self.fc2.apply(&hidden);
        record("logits", &logits, &mut trace);
        Ok((logits, trace))
    }

    pub fn forward_traced(&self, img: &Image<T>, noise_seed: Option<u64>) -> Result<(Vec<T>, CnnTrace<T>)> {
        let (logits, trace) = self.forward(img, noise_seed, true)?;
        Ok((logits, trace.expect("trace was requested")))
    }
}

impl<T: Real> LogitModel<T> for CnnModel<T> {
    fn num_classes(&self) -> usize {
        self.fc2.out
    }

    fn evaluate(&self, img: &Image<T>, noise_seed: Option<u64>) -> Result<Vec<T>> {
        Ok(self.forward(img, noise_seed, false)?.0)
    }
}

fn read_conv<T: Real>(wf: &WeightFile<T>, name: &str) -> Result<ConvLayer<T>> {
    let w = wf.get(&format!("{name}.weight"))?;
    if w.dims.len() != 4 || w.dims[2] != w.dims[3] || w.dims[2] == 0 {
        return Err(w.shape_error("(out_ch, in_ch, k, k) with square k >= 1"));
    }
    let (out_ch, in_ch, k) = (w.dims[0], w.dims[1], w.dims[2]);
    let b = wf.get(&format!("{name}.bias"))?;
    if b.dims != [out_ch] {
        return Err(b.shape_error(format!("({out_ch},)")));
    }
    Ok(ConvLayer {
        out_ch,
        in_ch,
        k,
        weight: w.data.clone(),
        bias: b.data.clone(),
    })
}

fn read_fc<T: Real>(wf: &WeightFile<T>, name: &str) -> Result<FcLayer<T>> {
    let w = wf.get(&format!("{name}.weight"))?;
    if w.dims.len() != 2 {
        return Err(w.shape_error("(out, in)"));
    }
    let (out, inp) = (w.dims[0], w.dims[1]);
    let b = wf.get(&format!("{name}.bias"))?;
    if b.dims != [out] {
        return Err(b.shape_error(format!("({out},)")));
    }
    Ok(FcLayer {
        out,
        inp,
        weight: w.data.clone(),
        bias: b.data.clone(),
    })
}


#[cfg(test)]
mod tests {
    use super::test_support::random_weight_file;
    use super::*;
    use crate::model::weights::Tensor;
    use crate::model::{mc_forward, softmax};
    use crate::seeding::mix;

    #[test]
    fn input_size_back_solves_from_fc1_fan_in() {
        // 5x5 kernels, channels 8/16/16, fc1 fan-in 16*4*4 = 256: the
        // classic 32x32 chain 32 -> 28 -> 24 -> 12 -> 8 -> 4.
        let wf = WeightFile::<f64> {
            tensors: vec![
                Tensor::new("conv1.weight", vec![8, 1, 5, 5], vec![0.0; 200]),
                Tensor::new("conv1.bias", vec![8], vec![0.0; 8]),
                Tensor::new("conv2.weight", vec![16, 8, 5, 5], vec![0.0; 3200]),
                Tensor::new("conv2.bias", vec![16], vec![0.0; 16]),
                Tensor::new("conv3.weight", vec![16, 16, 5, 5], vec![0.0; 6400]),
                Tensor::new("conv3.bias", vec![16], vec![0.0; 16]),
                Tensor::new("fc1.weight", vec![32, 256], vec![0.0; 8192]),
                Tensor::new("fc1.bias", vec![32], vec![0.0; 32]),
                Tensor::new("fc2.weight", vec![4, 32], vec![0.0; 128]),
                Tensor::new("fc2.bias", vec![4], vec![0.0; 4]),
            ],
        };
        let model = CnnModel::from_weight_file(&wf, DropoutConfig::default()).unwrap();
        assert_eq!(model.input_size(), (32, 32, 1));
        assert_eq!(model.num_classes(), 4);
    }

    #[test]
    fn zero_weights_pass_returns_fc2_bias() {
        let mut wf = random_weight_file(3, [2, 3, 3], 6, 3, 7);
        for t in &mut wf.tensors {
            if t.name != "fc2.bias" {
                t.data.iter_mut().for_each(|v| *v = 0.0);
            } else {
                t.data = vec![0.25, -1.5, 3.0];
            }
        }
        let model = CnnModel::from_weight_file(&wf, DropoutConfig::default()).unwrap();
        let (h, w, c) = model.input_size();
        assert_eq!((h, w, c), (12, 12, 1));
        let img = Image::from_fn(h, w, c, |r, col, _| (r * w + col) as f64 / 100.0);
        assert_eq!(model.evaluate(&img, None).unwrap(), vec![0.25, -1.5, 3.0]);
    }

    #[test]
    fn conv_oracle_single_window() {
        // One 3x3 window: the only output equals the weighted sum plus bias.
        let x = Planar {
            ch: 1,
            h: 3,
            w: 3,
            data: (0..9).map(|i| i as f64).collect(),
        };
        let l = ConvLayer {
            out_ch: 1,
            in_ch: 1,
            k: 3,
            weight: (0..9).map(|i| 0.1 * i as f64).collect(),
            bias: vec![0.5],
        };
        let out = conv_valid(&x, &l);
        let expect: f64 = (0..9).map(|i| i as f64 * 0.1 * i as f64).sum::<f64>() + 0.5;
        assert_eq!((out.h, out.w), (1, 1));
        assert!((out.data[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn maxpool_takes_block_maxima() {
        let x = Planar {
            ch: 1,
            h: 2,
            w: 4,
            data: vec![1.0, 5.0, -2.0, 0.0, 3.0, 2.0, 7.0, -1.0],
        };
        let out = maxpool2(&x);
        assert_eq!(out.data, vec![5.0, 7.0]);
    }

    #[test]
    fn keep_prob_one_matches_noise_free_pass() {
        let wf = random_weight_file(3, [2, 3, 3], 8, 3, 11);
        let model = CnnModel::from_weight_file(&wf, DropoutConfig { keep_prob: 1.0 }).unwrap();
        let (h, w, c) = model.input_size();
        let img = Image::from_fn(h, w, c, |r, col, _| ((r * 7 + col) % 5) as f64 / 5.0);
        let clean = model.evaluate(&img, None).unwrap();
        for seed in [0u64, 1, 99] {
            assert_eq!(model.evaluate(&img, Some(seed)).unwrap(), clean);
        }
    }

    #[test]
    fn dropout_replays_bitwise_and_varies_across_seeds() {
        let wf = random_weight_file(3, [2, 3, 3], 16, 3, 13);
        let model = CnnModel::from_weight_file(&wf, DropoutConfig::default()).unwrap();
        let (h, w, c) = model.input_size();
        let img = Image::from_fn(h, w, c, |r, col, _| ((r + 2 * col) % 7) as f64 / 7.0);
        let a = model.evaluate(&img, Some(42)).unwrap();
        let b = model.evaluate(&img, Some(42)).unwrap();
        assert_eq!(a, b);
        let other = model.evaluate(&img, Some(43)).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn trace_stages_arrive_in_order() {
        let wf = random_weight_file(3, [2, 3, 3], 8, 3, 17);
        let model = CnnModel::from_weight_file(&wf, DropoutConfig::default()).unwrap();
        let (h, w, c) = model.input_size();
        let img = Image::from_fn(h, w, c, |r, col, _| (r + col) as f64 / 24.0);
        let (logits, trace) = model.forward_traced(&img, None).unwrap();
        let names: Vec<_> = trace.stages.iter().map(|(n, _)| *n).collect();
        assert_eq!(
            names,
            ["conv1", "conv2", "pool1", "conv3", "pool2", "fc1", "logits"]
        );
        assert_eq!(trace.stages.last().unwrap().1, logits);
    }

    #[test]
    fn mean_posterior_variance_shrinks_with_more_samples() {
        // The spread of the MC-mean posterior should fall roughly as 1/M;
        // comparing M=4 against M=64 leaves a 16x margin, so a strict
        // per-input inequality is safe.
        let wf = random_weight_file(3, [2, 4, 4], 16, 3, 19);
        let model = CnnModel::from_weight_file(&wf, DropoutConfig::default()).unwrap();
        let (h, w, c) = model.input_size();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for input_idx in 0..10u64 {
            let img = Image::from_fn(h, w, c, |_, _, _| {
                crate::seeding::uniform01(&mut rng)
            });
            let spread = |m: usize| -> f64 {
                let reps = 16;
                let means: Vec<Vec<f64>> = (0..reps)
                    .map(|rep| {
                        let seed = mix(555, &[input_idx, rep, m as u64]);
                        let rows = mc_forward(&model, &img, m, seed).unwrap();
                        let mut mean = vec![0.0; model.num_classes()];
                        for row in &rows {
                            for (acc, p) in mean.iter_mut().zip(softmax(row).unwrap()) {
                                *acc += p / m as f64;
                            }
                        }
                        mean
                    })
                    .collect();
                let mut total_var = 0.0;
                for class in 0..model.num_classes() {
                    let vals: Vec<f64> = means.iter().map(|m| m[class]).collect();
                    let mu = vals.iter().sum::<f64>() / vals.len() as f64;
                    total_var += vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>()
                        / (vals.len() - 1) as f64;
                }
                total_var
            };
            assert!(
                spread(64) < spread(4),
                "input {input_idx}: variance did not shrink with more MC samples"
            );
        }
    }
}
