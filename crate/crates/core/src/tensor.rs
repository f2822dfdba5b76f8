//! The channel-major image tensor shared by every other module.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimensions of a `C×H×W` tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::shape(format!("dimensions must be positive, got {self}")));
        }
        Ok(())
    }

    pub fn with_channels(&self, channels: usize) -> Self {
        Self { channels, ..*self }
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// Row-major planar `C×H×W` grid of `f64` values.
///
/// Constructors reject non-finite values. The arithmetic helpers do not
/// re-check, so long-running loops (ODE solvers, samplers) call
/// [`ImageTensor::ensure_finite`] at their own checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    shape: Shape,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.len() {
            return Err(Error::shape(format!(
                "data length {} does not match shape {shape} ({} values)",
                data.len(),
                shape.len()
            )));
        }
        let tensor = Self { shape, data };
        tensor.ensure_finite("tensor construction")?;
        Ok(tensor)
    }

    pub fn zeros(shape: Shape) -> Result<Self> {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: Shape, value: f64) -> Result<Self> {
        shape.validate()?;
        if !value.is_finite() {
            return Err(Error::NonFinite("tensor fill value".into()));
        }
        Ok(Self {
            shape,
            data: vec![value; shape.len()],
        })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        shape.validate()?;
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..shape.channels {
            for y in 0..shape.height {
                for x in 0..shape.width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(shape, data)
    }

    /// Builds a tensor without the finiteness scan. Callers guarantee the
    /// length matches; used on hot paths whose outputs are checked later.
    pub(crate) fn from_raw(shape: Shape, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.shape.height + y) * self.shape.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(c, y, x)]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.shape.plane();
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{context} (flat index {pos})")));
        }
        Ok(())
    }

    pub fn require_shape(&self, expected: Shape, what: &str) -> Result<()> {
        if self.shape != expected {
            return Err(Error::shape(format!(
                "{what}: expected {expected}, got {}",
                self.shape
            )));
        }
        Ok(())
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self::from_raw(self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, mut f: impl FnMut(f64, f64) -> f64) -> Result<Self> {
        other.require_shape(self.shape, "elementwise operand")?;
        Ok(Self::from_raw(
            self.shape,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    /// `self + scale * other`.
    pub fn add_scaled(&self, other: &Self, scale: f64) -> Result<Self> {
        self.zip_map(other, |a, b| a + scale * b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn mean_abs_diff(&self, other: &Self) -> Result<f64> {
        other.require_shape(self.shape, "mean absolute difference")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / self.data.len() as f64)
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        other.require_shape(self.shape, "max absolute difference")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Stacks `self` and `other` along the channel axis.
    pub fn concat_channels(&self, other: &Self) -> Result<Self> {
        if self.height() != other.height() || self.width() != other.width() {
            return Err(Error::shape(format!(
                "cannot concatenate {} with {}: spatial dims differ",
                self.shape, other.shape
            )));
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Self::from_raw(
            self.shape.with_channels(self.channels() + other.channels()),
            data,
        ))
    }

    /// Copies the `height×width` window whose top-left corner is `(y0, x0)`.
    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Result<Self> {
        if y0 + height > self.height() || x0 + width > self.width() || height == 0 || width == 0 {
            return Err(Error::shape(format!(
                "crop {height}x{width} at ({y0},{x0}) exceeds {}",
                self.shape
            )));
        }
        let shape = Shape::new(self.channels(), height, width);
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..self.channels() {
            for y in y0..y0 + height {
                let start = self.index(c, y, x0);
                data.extend_from_slice(&self.data[start..start + width]);
            }
        }
        Ok(Self::from_raw(shape, data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_length_mismatch_and_nan() {
        assert!(ImageTensor::new(Shape::new(2, 2, 2), vec![0.0; 7]).is_err());
        assert!(matches!(
            ImageTensor::new(Shape::new(1, 1, 2), vec![0.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(ImageTensor::zeros(Shape::new(0, 3, 3)).is_err());
    }

    #[test]
    fn indexing_is_planar_row_major() {
        let t = ImageTensor::from_fn(Shape::new(2, 3, 4), |c, y, x| (c * 100 + y * 10 + x) as f64)
            .unwrap();
        assert_eq!(t.get(1, 2, 3), 123.0);
        assert_eq!(t.data()[t.index(1, 0, 0)], 100.0);
        assert_eq!(t.channel(1)[5], 111.0);
    }

    #[test]
    fn crop_and_concat() {
        let t = ImageTensor::from_fn(Shape::new(1, 4, 4), |_, y, x| (y * 4 + x) as f64).unwrap();
        let c = t.crop(1, 2, 2, 2).unwrap();
        assert_eq!(c.data(), &[6.0, 7.0, 10.0, 11.0]);
        let both = c.concat_channels(&c).unwrap();
        assert_eq!(both.channels(), 2);
        assert_eq!(both.channel(1), c.data());
        assert!(t.crop(3, 3, 2, 2).is_err());
    }
}
