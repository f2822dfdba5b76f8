//! Per-pixel softmax classifier used as a land cover head.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, Shape};

/// `p(k | x) = softmax(W x + b)_k` for each pixel's band vector `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelClassifier {
    /// One row of band weights per class.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl PixelClassifier {
    pub fn new(weights: Vec<Vec<f64>>, bias: Vec<f64>) -> Result<Self> {
        let c = Self { weights, bias };
        c.validate()?;
        Ok(c)
    }

    pub fn classes(&self) -> usize {
        self.weights.len()
    }

    pub fn bands(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    fn validate(&self) -> Result<()> {
        let bands = self.bands();
        if self.weights.is_empty() || bands == 0 || self.weights.iter().any(|r| r.len() != bands) {
            return Err(Error::shape("classifier weights must be a nonempty K×C matrix"));
        }
        if self.bias.len() != self.classes() {
            return Err(Error::shape(format!("{} biases for {} classes", self.bias.len(), self.classes())));
        }
        if self.weights.iter().flatten().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("classifier parameters".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    /// `K×H×W` class probabilities.
    pub fn probabilities(&self, image: &ImageTensor) -> Result<ImageTensor> {
        let shape = image.shape();
        if shape.channels != self.bands() {
            return Err(Error::shape(format!(
                "classifier expects {} bands, image has {}",
                self.bands(),
                shape.channels
            )));
        }
        let (k, plane) = (self.classes(), shape.plane());
        let mut out = vec![0.0; k * plane];
        let mut logits = vec![0.0; k];
        for p in 0..plane {
            for (c, (row, b)) in self.weights.iter().zip(&self.bias).enumerate() {
                logits[c] = b + row.iter().enumerate().map(|(i, w)| w * image.data()[i * plane + p]).sum::<f64>();
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            for c in 0..k {
                out[c * plane + p] = (logits[c] - max).exp() / z;
            }
        }
        ImageTensor::new(Shape::new(k, shape.height, shape.width), out)
    }
}
