use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralMetrics {
    /// `None` when the truth has zero variance.
    pub r2: Option<f64>,
    pub rmse: f64,
    pub mae: f64,
    /// Percent. `None` when every truth value is zero.
    pub mape: Option<f64>,
    pub mape_skipped: usize,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub bands: Vec<SpectralMetrics>,
    pub pooled: SpectralMetrics,
}

pub fn spectral_metrics_slice(y: &[f64], y_hat: &[f64]) -> Result<SpectralMetrics> {
    let n = y.len();
    if n != y_hat.len() {
        return Err(Error::shape(format!("{n} truth vs {} predicted samples", y_hat.len())));
    }
    if n < 2 {
        return Err(Error::invalid("spectral metrics need at least two samples"));
    }
    if let Some(v) = y.iter().chain(y_hat).find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("spectral metric input {v}")));
    }
    let nf = n as f64;
    let mean = y.iter().sum::<f64>() / nf;
    let (mut ss_res, mut ss_tot, mut abs_sum, mut pct_sum) = (0.0, 0.0, 0.0, 0.0);
    let mut skipped = 0;
    for (&t, &p) in y.iter().zip(y_hat) {
        let e = t - p;
        ss_res += e * e;
        ss_tot += (t - mean) * (t - mean);
        abs_sum += e.abs();
        if t == 0.0 {
            skipped += 1;
        } else {
            pct_sum += (e / t).abs();
        }
    }
    let used = n - skipped;
    Ok(SpectralMetrics {
        r2: (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot),
        rmse: (ss_res / nf).sqrt(),
        mae: abs_sum / nf,
        mape: (used > 0).then(|| 100.0 * pct_sum / used as f64),
        mape_skipped: skipped,
        n,
    })
}

/// Metrics per band and over all bands pooled.
pub fn spectral_metrics(y: &ImageTensor, y_hat: &ImageTensor) -> Result<SpectralReport> {
    y_hat.require_shape(y.shape(), "prediction")?;
    let bands = (0..y.channels())
        .map(|c| spectral_metrics_slice(y.channel(c), y_hat.channel(c)))
        .collect::<Result<_>>()?;
    let pooled = spectral_metrics_slice(y.data(), y_hat.data())?;
    Ok(SpectralReport { bands, pooled })
}
