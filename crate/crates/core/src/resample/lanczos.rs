use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::LabelRaster;
use crate::tensor::{ImageTensor, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanczosKernel {
    pub lobes: usize,
}

impl Default for LanczosKernel {
    fn default() -> Self {
        Self { lobes: 3 }
    }
}

impl LanczosKernel {
    pub fn weight(&self, x: f64) -> f64 {
        let a = self.lobes as f64;
        if x == 0.0 {
            return 1.0;
        }
        if x.abs() >= a || x.fract() == 0.0 {
            return 0.0;
        }
        let px = PI * x;
        a * px.sin() * (px / a).sin() / (px * px)
    }
}

/// Normalized tap weights for one output coordinate along one axis.
#[derive(Debug, Clone)]
struct Taps {
    start: usize,
    weights: Vec<f64>,
}

fn axis_taps(kernel: LanczosKernel, in_len: usize, out_len: usize) -> Vec<Taps> {
    let ratio = in_len as f64 / out_len as f64;
    // Widen the kernel when shrinking so it acts as a low-pass filter.
    let support_scale = ratio.max(1.0);
    let reach = kernel.lobes as f64 * support_scale;
    (0..out_len)
        .map(|o| {
            let center = (o as f64 + 0.5) * ratio - 0.5;
            let lo = ((center - reach).floor() as i64 + 1).max(0) as usize;
            let hi = ((center + reach).ceil() as i64 - 1).min(in_len as i64 - 1).max(lo as i64) as usize;
            let mut weights: Vec<f64> = (lo..=hi)
                .map(|j| kernel.weight((j as f64 - center) / support_scale))
                .collect();
            let sum: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= sum;
            }
            Taps { start: lo, weights }
        })
        .collect()
}

/// Separable Lanczos resampling to explicit output dimensions. Pixel
/// centres are aligned; weights falling outside the image are dropped and
/// the remainder renormalized.
pub fn lanczos_resample(
    image: &ImageTensor,
    out_height: usize,
    out_width: usize,
    kernel: LanczosKernel,
) -> Result<ImageTensor> {
    if out_height == 0 || out_width == 0 {
        return Err(Error::invalid(format!("output dimensions must be >= 1, got {out_height}x{out_width}")));
    }
    if kernel.lobes == 0 {
        return Err(Error::invalid("Lanczos kernel needs at least one lobe"));
    }
    let shape = image.shape();
    let (h, w) = (shape.height, shape.width);
    let xt = axis_taps(kernel, w, out_width);
    let yt = axis_taps(kernel, h, out_height);
    let out_shape = Shape::new(shape.channels, out_height, out_width);

    let mut out = vec![0.0; out_shape.len()];
    let rows: Vec<(usize, &mut [f64])> = out.chunks_mut(out_width).enumerate().collect();
    let data = image.data();
    // Horizontal pass first (channel-major, H×out_W), then the vertical pass
    // writes each output row independently.
    let mut horiz = vec![0.0; shape.channels * h * out_width];
    horiz.par_chunks_mut(out_width).enumerate().for_each(|(row, dst)| {
        let src = &data[row * w..(row + 1) * w];
        for (d, taps) in dst.iter_mut().zip(&xt) {
            *d = taps.weights.iter().enumerate().map(|(k, wt)| wt * src[taps.start + k]).sum();
        }
    });
    rows.into_par_iter().for_each(|(row, dst)| {
        let c = row / out_height;
        let taps = &yt[row % out_height];
        let plane = &horiz[c * h * out_width..(c + 1) * h * out_width];
        for (x, d) in dst.iter_mut().enumerate() {
            *d = taps
                .weights
                .iter()
                .enumerate()
                .map(|(k, wt)| wt * plane[(taps.start + k) * out_width + x])
                .sum();
        }
    });
    ImageTensor::new(out_shape, out)
}

/// Resamples by a scale factor; output dimensions are rounded.
pub fn lanczos_scale(image: &ImageTensor, scale: f64, kernel: LanczosKernel) -> Result<ImageTensor> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::invalid(format!("scale must be positive, got {scale}")));
    }
    let oh = (image.height() as f64 * scale).round() as usize;
    let ow = (image.width() as f64 * scale).round() as usize;
    lanczos_resample(image, oh, ow, kernel)
}

fn check_factor(height: usize, width: usize, factor: usize) -> Result<()> {
    if factor == 0 || height % factor != 0 || width % factor != 0 {
        return Err(Error::invalid(format!(
            "factor {factor} must divide the {height}x{width} grid"
        )));
    }
    Ok(())
}

/// Area-mean downsampling by an integer factor.
pub fn box_downsample(image: &ImageTensor, factor: usize) -> Result<ImageTensor> {
    let shape = image.shape();
    check_factor(shape.height, shape.width, factor)?;
    let (oh, ow) = (shape.height / factor, shape.width / factor);
    let area = (factor * factor) as f64;
    ImageTensor::from_fn(Shape::new(shape.channels, oh, ow), |c, y, x| {
        let mut sum = 0.0;
        for dy in 0..factor {
            for dx in 0..factor {
                sum += image.get(c, y * factor + dy, x * factor + dx);
            }
        }
        sum / area
    })
}

/// Plurality label within each `factor×factor` cell, ties to the lowest id.
pub fn mode_downsample(labels: &LabelRaster, factor: usize) -> Result<LabelRaster> {
    check_factor(labels.height, labels.width, factor)?;
    let (oh, ow) = (labels.height / factor, labels.width / factor);
    let mut out = Vec::with_capacity(oh * ow);
    let mut cell = Vec::with_capacity(factor * factor);
    for y in 0..oh {
        for x in 0..ow {
            cell.clear();
            for dy in 0..factor {
                let row = (y * factor + dy) * labels.width + x * factor;
                cell.extend_from_slice(&labels.labels[row..row + factor]);
            }
            cell.sort_unstable();
            let (mut best, mut best_n) = (cell[0], 0);
            let mut i = 0;
            while i < cell.len() {
                let j = cell[i..].iter().take_while(|&&v| v == cell[i]).count();
                if j > best_n {
                    best = cell[i];
                    best_n = j;
                }
                i += j;
            }
            out.push(best);
        }
    }
    LabelRaster::new(oh, ow, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_properties() {
        let k = LanczosKernel::default();
        assert_eq!(k.weight(0.0), 1.0);
        for i in [-3.0, -2.0, -1.0, 1.0, 2.0, 3.0, 4.5, -7.0] {
            assert_eq!(k.weight(i), 0.0);
        }
        assert!((k.weight(0.5) - k.weight(-0.5)).abs() < 1e-15);
        assert!(k.weight(1.5) < 0.0);
    }


    #[test]
    fn unit_scale_is_identity() {
        let img = ImageTensor::from_fn(Shape::new(2, 9, 13), |c, y, x| ((c * 7 + y * 3 + x) as f64).sin()).unwrap();
        let out = lanczos_resample(&img, 9, 13, LanczosKernel::default()).unwrap();
        assert!(out.max_abs_diff(&img).unwrap() < 1e-12);
    }

    #[test]
    fn constant_stays_constant() {
        let img = ImageTensor::filled(Shape::new(1, 7, 5), 3.25).unwrap();
        for (oh, ow) in [(28, 20), (3, 2), (11, 17), (1, 1)] {
            let out = lanczos_resample(&img, oh, ow, LanczosKernel::default()).unwrap();
            assert!(out.data().iter().all(|v| (v - 3.25).abs() < 1e-12));
        }
    }

    #[test]
    fn delta_upsample_matches_direct_oracle() {
        let (h, w, s) = (8usize, 8usize, 4usize);
        let img = ImageTensor::from_fn(Shape::new(1, h, w), |_, y, x| if (y, x) == (3, 4) { 1.0 } else { 0.0 }).unwrap();
        let out = lanczos_resample(&img, h * s, w * s, LanczosKernel::default()).unwrap();
        let k = LanczosKernel::default();
        // Direct 2-D sum with a product kernel normalized over in-bounds taps.
        for oy in 0..h * s {
            for ox in 0..w * s {
                let cy = (oy as f64 + 0.5) / s as f64 - 0.5;
                let cx = (ox as f64 + 0.5) / s as f64 - 0.5;
                let (mut num, mut den) = (0.0, 0.0);
                for iy in 0..h {
                    for ix in 0..w {
                        let wt = k.weight(iy as f64 - cy) * k.weight(ix as f64 - cx);
                        num += wt * img.get(0, iy, ix);
                        den += wt;
                    }
                }
                assert!((out.get(0, oy, ox) - num / den).abs() < 1e-12, "({oy},{ox})");
            }
        }
    }

    #[test]
    fn linear_ramp_preserved_away_from_borders() {
        // Ramp spans [0, 1] across the image.
        let f = |y: f64, x: f64| (0.3 * x + 0.7 * y) / 23.0;
        let img = ImageTensor::from_fn(Shape::new(1, 24, 24), |_, y, x| f(y as f64, x as f64)).unwrap();
        let out = lanczos_resample(&img, 96, 96, LanczosKernel::default()).unwrap();
        for oy in 16..80 {
            for ox in 16..80 {
                let y = (oy as f64 + 0.5) / 4.0 - 0.5;
                let x = (ox as f64 + 0.5) / 4.0 - 0.5;
                assert!((out.get(0, oy, ox) - f(y, x)).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn rejects_empty_output() {
        let img = ImageTensor::zeros(Shape::new(1, 4, 4)).unwrap();
        assert!(lanczos_resample(&img, 0, 4, LanczosKernel::default()).is_err());
        assert!(lanczos_scale(&img, 0.1, LanczosKernel::default()).is_err());
        assert_eq!(lanczos_scale(&img, 2.5, LanczosKernel::default()).unwrap().shape(), Shape::new(1, 10, 10));
    }

    #[test]
    fn box_and_mode_downsample() {
        let img = ImageTensor::new(Shape::new(1, 2, 4), vec![1.0, 3.0, 0.0, 0.0, 5.0, 7.0, 4.0, 8.0]).unwrap();
        let d = box_downsample(&img, 2).unwrap();
        assert_eq!(d.data(), &[4.0, 3.0]);
        assert!(box_downsample(&img, 3).is_err());
        let labels = LabelRaster::new(2, 4, vec![2, 1, 3, 3, 1, 2, 0, 3]).unwrap();
        let m = mode_downsample(&labels, 2).unwrap();
        assert_eq!(m.labels, vec![1, 3]);
    }
}
