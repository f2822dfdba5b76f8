use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// Affine map from a sensor value range onto `[-1, 1]`.
///
/// Defaults assume reflectance scaled by 10⁴ (`0..=10000`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalizationSpec {
    pub input_min: f64,
    pub input_max: f64,
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        Self {
            input_min: 0.0,
            input_max: 10_000.0,
        }
    }
}

impl NormalizationSpec {
    pub fn new(input_min: f64, input_max: f64) -> Result<Self> {
        let spec = Self {
            input_min,
            input_max,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.input_min.is_finite() && self.input_max.is_finite())
            || self.input_max <= self.input_min
        {
            return Err(Error::invalid(format!(
                "normalization range [{}, {}] must be finite with max > min",
                self.input_min, self.input_max
            )));
        }
        Ok(())
    }

    /// Maps one value, clamping to the input range first.
    pub fn normalize_value(&self, v: f64) -> f64 {
        let clamped = v.clamp(self.input_min, self.input_max);
        2.0 * (clamped - self.input_min) / (self.input_max - self.input_min) - 1.0
    }

    pub fn denormalize_value(&self, v: f64) -> f64 {
        (v + 1.0) * 0.5 * (self.input_max - self.input_min) + self.input_min
    }
}

pub fn normalize(chip: &ImageTensor, spec: &NormalizationSpec) -> Result<ImageTensor> {
    spec.validate()?;
    chip.ensure_finite("normalize input")?;
    Ok(chip.map(|v| spec.normalize_value(v)))
}

pub fn denormalize(chip: &ImageTensor, spec: &NormalizationSpec) -> Result<ImageTensor> {
    spec.validate()?;
    chip.ensure_finite("denormalize input")?;
    Ok(chip.map(|v| spec.denormalize_value(v)))
}
