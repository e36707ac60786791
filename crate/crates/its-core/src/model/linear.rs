//! Flatten-and-affine classifier: `logits = W x + b` over the row-major
//! flattened pixel buffer. Deterministic — the noise seed is ignored.
//!
//! Stored as the tensor pair `fc.weight` `(classes, features)` and
//! `fc.bias` `(classes,)`.

use std::path::Path;

use crate::error::{ItsError, Result};
use crate::image::Image;
use crate::model::{LogitModel, WeightFile};
use crate::model::weights::Tensor;
use crate::scalar::Real;

#[derive(Clone, Debug)]
pub struct LinearModel<T: Real> {
    /// `(classes, features)`, row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub classes: usize,
    pub features: usize,
}

impl<T: Real> LinearModel<T> {
    pub fn new(weight: Vec<T>, bias: Vec<T>, classes: usize, features: usize) -> Result<Self> {
        if weight.len() != classes * features || bias.len() != classes || classes == 0 {
            return Err(ItsError::InvalidConfig {
                what: format!(
                    "linear model buffers disagree: weight {} vs {classes}x{features}, bias {}",
                    weight.len(),
                    bias.len()
                ),
            });
        }
        Ok(LinearModel {
            weight,
            bias,
            classes,
            features,
        })
    }

    pub fn from_weight_file(wf: &WeightFile<T>) -> Result<Self> {
        let w = wf.get("fc.weight")?;
        if w.dims.len() != 2 {
            return Err(w.shape_error("(classes, features)"));
        }
        let (classes, features) = (w.dims[0], w.dims[1]);
        let b = wf.get("fc.bias")?;
        if b.dims != [classes] {
            return Err(b.shape_error(format!("({classes},)")));
        }
        LinearModel::new(w.data.clone(), b.data.clone(), classes, features)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_weight_file(&WeightFile::read(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let wf = WeightFile {
            tensors: vec![
                Tensor::new(
                    "fc.weight",
                    vec![self.classes, self.features],
                    self.weight.clone(),
                ),
                Tensor::new("fc.bias", vec![self.classes], self.bias.clone()),
            ],
        };
        wf.write(path)
    }
}

impl<T: Real> LogitModel<T> for LinearModel<T> {
    fn num_classes(&self) -> usize {
        self.classes
    }

    fn evaluate(&self, img: &Image<T>, _noise_seed: Option<u64>) -> Result<Vec<T>> {
        let x = img.pixels();
        if x.len() != self.features {
            return Err(ItsError::InvalidConfig {
                what: format!(
                    "linear model expects {} features, image has {}",
                    self.features,
                    x.len()
                ),
            });
        }
        Ok((0..self.classes)
            .map(|c| {
                let row = &self.weight[c * self.features..(c + 1) * self.features];
                let mut acc = self.bias[c];
                for (w, v) in row.iter().zip(x) {
                    acc += *w * *v;
                }
                acc
            })
            .collect())
    }
}
