use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear warmup from `lr_start` to `lr_peak`, then cosine annealing to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub warmup_epochs: f64,
    pub total_epochs: f64,
    pub lr_start: f64,
    pub lr_peak: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            warmup_epochs: 10.0,
            total_epochs: 100.0,
            lr_start: 1e-5,
            lr_peak: 1e-4,
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = self.warmup_epochs >= 0.0
            && self.total_epochs > self.warmup_epochs
            && self.lr_start >= 0.0
            && self.lr_peak > 0.0
            && self.lr_start.is_finite()
            && self.lr_peak.is_finite();
        if !ok {
            return Err(Error::invalid(format!("invalid learning-rate schedule {self:?}")));
        }
        Ok(())
    }

    /// Learning rate at a (possibly fractional) epoch in `[0, total_epochs]`.
    pub fn lr_at(&self, epoch: f64) -> Result<f64> {
        self.validate()?;
        if !(0.0..=self.total_epochs).contains(&epoch) {
            return Err(Error::invalid(format!(
                "epoch {epoch} outside [0, {}]",
                self.total_epochs
            )));
        }
        if epoch < self.warmup_epochs {
            let frac = epoch / self.warmup_epochs;
            return Ok(self.lr_start + (self.lr_peak - self.lr_start) * frac);
        }
        let progress = (epoch - self.warmup_epochs) / (self.total_epochs - self.warmup_epochs);
        Ok(self.lr_peak * 0.5 * (1.0 + (PI * progress).cos()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_anchor_points() {
        let s = LrSchedule::default();
        assert_eq!(s.lr_at(0.0).unwrap(), 1e-5);
        assert_eq!(s.lr_at(10.0).unwrap(), 1e-4);
        assert!((s.lr_at(55.0).unwrap() - 5e-5).abs() < 1e-18);
        assert!(s.lr_at(100.0).unwrap().abs() < 1e-20);
    }

    #[test]
    fn out_of_range_epoch() {
        let s = LrSchedule::default();
        assert!(s.lr_at(-0.5).is_err());
        assert!(s.lr_at(100.5).is_err());
    }

    #[test]
    fn continuous_at_every_junction() {
        let s = LrSchedule::default();
        for &e in &[1e-9, 5.0, 10.0 - 1e-9, 10.0, 50.0, 100.0 - 1e-9] {
            let a = s.lr_at(e).unwrap();
            let b = s.lr_at(e + 1e-9).unwrap();
            assert!((a - b).abs() < 1e-12, "jump at {e}: {a} vs {b}");
        }
    }
}
