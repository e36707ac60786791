//! Nearest-template classifier: the logit for class `y` is the negative
//! squared L2 distance between the input and that class's template image,
//! scaled by a sharpness factor. Deterministic — the noise seed is ignored.

use crate::error::{ItsError, Result};
use crate::image::Image;
use crate::model::LogitModel;
use crate::scalar::Real;

#[derive(Clone, Debug)]
pub struct TemplateModel<T: Real> {
    templates: Vec<Image<T>>,
    beta: T,
}

impl<T: Real> TemplateModel<T> {
    /// `beta` scales the squared distances; larger values sharpen the
    /// softmax posterior. All templates must share one shape.
    pub fn new(templates: Vec<Image<T>>, beta: T) -> Result<Self> {
        if templates.is_empty() {
            return Err(ItsError::InvalidConfig {
                what: "template model needs at least one class template".to_string(),
            });
        }
        if !(beta.is_finite() && beta > T::zero()) {
            return Err(ItsError::InvalidConfig {
                what: format!("template sharpness must be finite and positive, got {beta}"),
            });
        }
        let (h, w, c) = (
            templates[0].height(),
            templates[0].width(),
            templates[0].channels(),
        );
        for t in &templates[1..] {
            t.shape_matches(h, w, c)?;
        }
        Ok(TemplateModel { templates, beta })
    }

    pub fn templates(&self) -> &[Image<T>] {
        &self.templates
    }

    pub fn beta(&self) -> T {
        self.beta
    }
}

impl<T: Real> LogitModel<T> for TemplateModel<T> {
    fn num_classes(&self) -> usize {
        self.templates.len()
    }

    fn evaluate(&self, img: &Image<T>, _noise_seed: Option<u64>) -> Result<Vec<T>> {
        let t0 = &self.templates[0];
        img.shape_matches(t0.height(), t0.width(), t0.channels())?;
        Ok(self
            .templates
            .iter()
            .map(|t| {
                let mut sq = T::zero();
                for (a, b) in img.pixels().iter().zip(t.pixels()) {
                    let d = *a - *b;
                    sq += d * d;
                }
                -self.beta * sq
            })
            .collect())
    }
}
