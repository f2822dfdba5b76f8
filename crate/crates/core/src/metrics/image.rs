use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// Peak signal-to-noise ratio in dB for value range `range`. Identical
/// images give `f64::INFINITY`.
pub fn psnr(y: &ImageTensor, y_hat: &ImageTensor, range: f64) -> Result<f64> {
    if !(range.is_finite() && range > 0.0) {
        return Err(Error::invalid(format!("value range must be positive, got {range}")));
    }
    let diff = y.sub(y_hat)?;
    let mse = diff.data().iter().map(|d| d * d).sum::<f64>() / diff.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (range * range / mse).log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            range: 2.0,
        }
    }
}

impl SsimParams {
    /// Normalized 1-D Gaussian; the 2-D window is its outer product.
    pub fn kernel_1d(&self) -> Vec<f64> {
        let c = (self.window as f64 - 1.0) / 2.0;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - c;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / sum).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.window == 0 || !(self.sigma > 0.0) || !(self.range > 0.0) || self.k1 < 0.0 || self.k2 < 0.0 {
            return Err(Error::invalid(format!("invalid SSIM parameters {self:?}")));
        }
        Ok(())
    }
}

/// Valid-mode separable filter of one `h×w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&src[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, a)| a * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity over all valid window positions and channels.
pub fn ssim(x: &ImageTensor, y: &ImageTensor, params: &SsimParams) -> Result<f64> {
    params.validate()?;
    y.require_shape(x.shape(), "ssim operand")?;
    let shape = x.shape();
    let n = params.window;
    if shape.height < n || shape.width < n {
        return Err(Error::shape(format!("image {shape} is smaller than the {n}x{n} window")));
    }
    let k = params.kernel_1d();
    let c1 = (params.k1 * params.range).powi(2);
    let c2 = (params.k2 * params.range).powi(2);
    let (h, w) = (shape.height, shape.width);
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..shape.channels {
        let (a, b) = (x.channel(c), y.channel(c));
        let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&p, &q)| f(p, q)).collect() };
        let mu_x = filter_valid(a, h, w, &k);
        let mu_y = filter_valid(b, h, w, &k);
        let xx = filter_valid(&prod(|p, _| p * p), h, w, &k);
        let yy = filter_valid(&prod(|_, q| q * q), h, w, &k);
        let xy = filter_valid(&prod(|p, q| p * q), h, w, &k);
        for i in 0..mu_x.len() {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = xx[i] - mx * mx;
            let vy = yy[i] - my * my;
            let cov = xy[i] - mx * my;
            total += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
        count += mu_x.len();
    }
    Ok(total / count as f64)
}
