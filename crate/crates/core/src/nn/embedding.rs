use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sinusoidal time features.
///
/// For `t ∈ [0, 1]` the argument is `t · time_scale`, and channel pair `i`
/// uses angular frequency `base^(-i / (dim/2))`, giving `[sin…, cos…]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeEmbedding {
    pub dim: usize,
    pub base: f64,
    pub time_scale: f64,
}

impl Default for TimeEmbedding {
    fn default() -> Self {
        Self {
            dim: 64,
            base: 1e4,
            time_scale: 1000.0,
        }
    }
}

impl TimeEmbedding {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim % 2 != 0 {
            return Err(Error::invalid(format!(
                "time embedding dimension must be even and positive, got {}",
                self.dim
            )));
        }
        if !(self.base > 1.0 && self.time_scale > 0.0) {
            return Err(Error::invalid("time embedding base must exceed 1 and scale be positive"));
        }
        Ok(())
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let half = self.dim / 2;
        (0..half)
            .map(|i| self.base.powf(-(i as f64) / half as f64))
            .collect()
    }

    pub fn embed(&self, t: f64) -> Vec<f64> {
        let arg = t * self.time_scale;
        let freqs = self.frequencies();
        let mut out: Vec<f64> = freqs.iter().map(|f| (arg * f).sin()).collect();
        out.extend(freqs.iter().map(|f| (arg * f).cos()));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_unit_bounded() {
        let emb = TimeEmbedding::default();
        for k in 0..=100 {
            let e = emb.embed(k as f64 / 100.0);
            assert_eq!(e.len(), 64);
            assert!(e.iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn injective_on_millesimal_grid() {
        let emb = TimeEmbedding::default();
        let all: Vec<Vec<f64>> = (0..=1000).map(|k| emb.embed(k as f64 / 1000.0)).collect();
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                let d: f64 = all[i]
                    .iter()
                    .zip(&all[j])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(d > 1e-3, "t={} and t={} collide ({d})", i, j);
            }
        }
    }

    #[test]
    fn rejects_odd_dimension() {
        let emb = TimeEmbedding {
            dim: 7,
            ..Default::default()
        };
        assert!(emb.validate().is_err());
    }
}
