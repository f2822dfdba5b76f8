//! Small synthetic distributions for end-to-end sampler checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{ImageTensor, Shape};

/// Equal-weight mixture of isotropic 2-D Gaussians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture2d {
    pub means: Vec<[f64; 2]>,
    pub sd: f64,
}

impl GaussianMixture2d {
    /// Two components at `±(mu, mu/2)`.
    pub fn symmetric(mu: f64, sd: f64) -> Self {
        Self {
            means: vec![[mu, 0.5 * mu], [-mu, -0.5 * mu]],
            sd,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.means.is_empty() || !(self.sd >= 0.0 && self.sd.is_finite()) {
            return Err(Error::invalid("mixture needs components and a finite sd >= 0"));
        }
        Ok(())
    }

    pub fn draw(&self, rng: &mut SeededRng) -> [f64; 2] {
        let m = self.means[rng.below(self.means.len())];
        [m[0] + self.sd * rng.standard_normal(), m[1] + self.sd * rng.standard_normal()]
    }

    pub fn sample(&self, n: usize, rng: &mut SeededRng) -> Vec<[f64; 2]> {
        (0..n).map(|_| self.draw(rng)).collect()
    }
}

pub const POINT_SHAPE: Shape = Shape::new(2, 1, 1);

pub fn point_tensor(p: [f64; 2]) -> Result<ImageTensor> {
    ImageTensor::new(POINT_SHAPE, p.to_vec())
}

pub fn tensor_point(t: &ImageTensor) -> Result<[f64; 2]> {
    t.require_shape(POINT_SHAPE, "2-D point")?;
    Ok([t.data()[0], t.data()[1]])
}

fn mean_distance(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let mut sum = 0.0;
    for p in a {
        for q in b {
            sum += (p[0] - q[0]).hypot(p[1] - q[1]);
        }
    }
    sum / (a.len() * b.len()) as f64
}

/// Empirical (V-statistic) energy distance `2E|X−Y| − E|X−X'| − E|Y−Y'|`.
pub fn energy_distance(a: &[[f64; 2]], b: &[[f64; 2]]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("energy distance of an empty sample"));
    }
    Ok(2.0 * mean_distance(a, b) - mean_distance(a, a) - mean_distance(b, b))
}
