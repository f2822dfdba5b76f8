use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// Affine map `target ≈ slope·source + intercept` for one band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandCalibration {
    pub slope: f64,
    pub intercept: f64,
    pub fit_r2: f64,
    /// Standard error of the fitted slope; zero for exact or degenerate fits.
    pub slope_stderr: f64,
    /// Set when the source band had no variance and identity was returned.
    pub degenerate: bool,
}

impl BandCalibration {
    pub const IDENTITY: Self = Self {
        slope: 1.0,
        intercept: 0.0,
        fit_r2: 0.0,
        slope_stderr: 0.0,
        degenerate: false,
    };

    pub fn apply(&self, v: f64) -> f64 {
        self.slope * v + self.intercept
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSet {
    pub bands: Vec<BandCalibration>,
}

impl CalibrationSet {
    pub fn identity(bands: usize) -> Self {
        Self {
            bands: vec![BandCalibration::IDENTITY; bands],
        }
    }
}

/// Ordinary least squares with intercept for one band.
pub fn fit_band(source: &[f64], target: &[f64]) -> Result<BandCalibration> {
    let n = source.len();
    if n != target.len() {
        return Err(Error::shape(format!("{n} source vs {} target samples", target.len())));
    }
    if n < 2 {
        return Err(Error::invalid("calibration needs at least two samples"));
    }
    let nf = n as f64;
    let mx = source.iter().sum::<f64>() / nf;
    let my = target.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in source.iter().zip(target) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx <= f64::EPSILON * f64::EPSILON * nf * (1.0 + mx * mx) {
        log::warn!("zero-variance band; returning identity calibration");
        return Ok(BandCalibration {
            degenerate: true,
            ..BandCalibration::IDENTITY
        });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = source
        .iter()
        .zip(target)
        .map(|(&x, &y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum();
    let fit_r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    let slope_stderr = if n > 2 {
        (ss_res / (nf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(BandCalibration {
        slope,
        intercept,
        fit_r2,
        slope_stderr,
        degenerate: false,
    })
}

/// Per-band fit of `reference ≈ slope·source + intercept`. Both inputs must
/// already share a grid (see [`super::box_downsample`]).
pub fn fit_cross_calibration(source: &ImageTensor, reference: &ImageTensor) -> Result<CalibrationSet> {
    if source.shape() != reference.shape() {
        return Err(Error::shape(format!(
            "source {} and reference {} grids differ",
            source.shape(),
            reference.shape()
        )));
    }
    let bands = (0..source.channels())
        .map(|c| fit_band(source.channel(c), reference.channel(c)))
        .collect::<Result<_>>()?;
    Ok(CalibrationSet { bands })
}

pub fn apply_calibration(image: &ImageTensor, calibration: &CalibrationSet) -> Result<ImageTensor> {
    if calibration.bands.len() != image.channels() {
        return Err(Error::shape(format!(
            "{} calibrated bands for a {}-band image",
            calibration.bands.len(),
            image.channels()
        )));
    }
    let plane = image.shape().plane();
    let data = image
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| calibration.bands[i / plane].apply(v))
        .collect();
    ImageTensor::new(image.shape(), data)
}
