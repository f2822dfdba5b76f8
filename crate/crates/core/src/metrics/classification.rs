use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Chesapeake Bay land cover legend used by the mapping tools.
pub const LAND_COVER_CLASSES: [&str; 5] = ["open_water", "herbaceous", "forest", "impervious", "barren"];

/// Counts with rows indexed by true class and columns by predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Result<Self> {
        if classes == 0 {
            return Err(Error::invalid("confusion matrix needs at least one class"));
        }
        Ok(Self {
            classes,
            counts: vec![0; classes * classes],
        })
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::shape("confusion matrix rows must form a square"));
        }
        let mut m = Self::new(k)?;
        m.counts = rows.concat();
        Ok(m)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes).map(<[u64]>::to_vec).collect()
    }

    pub fn record(&mut self, truth: u32, predicted: u32) -> Result<()> {
        let k = self.classes;
        let (t, p) = (truth as usize, predicted as usize);
        if t >= k || p >= k {
            return Err(Error::invalid(format!("label pair ({truth}, {predicted}) outside {k} classes")));
        }
        self.counts[t * k + p] += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::shape(format!("merging {} and {} class matrices", self.classes, other.classes)));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_total(&self, class: usize) -> u64 {
        (0..self.classes).map(|p| self.get(class, p)).sum()
    }

    pub fn column_total(&self, class: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, class)).sum()
    }
}

/// Tallies label pairs, in parallel chunks merged by addition.
pub fn accumulate_confusion(predicted: &[u32], truth: &[u32], classes: usize) -> Result<ConfusionMatrix> {
    if predicted.len() != truth.len() {
        return Err(Error::shape(format!("{} predictions vs {} truth labels", predicted.len(), truth.len())));
    }
    let empty = ConfusionMatrix::new(classes)?;
    predicted
        .par_chunks(1 << 16)
        .zip(truth.par_chunks(1 << 16))
        .map(|(p, t)| {
            let mut m = empty.clone();
            for (&pi, &ti) in p.iter().zip(t) {
                m.record(ti, pi)?;
            }
            Ok(m)
        })
        .try_reduce(|| empty.clone(), |mut a, b| {
            a.merge(&b)?;
            Ok(a)
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    /// User's accuracy (precision); `None` without predictions of the class.
    pub users_accuracy: Option<f64>,
    /// Producer's accuracy (recall); `None` without true samples of the class.
    pub producers_accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub true_count: u64,
    pub predicted_count: u64,
}

impl ClassMetrics {
    pub fn is_absent(&self) -> bool {
        self.true_count == 0 && self.predicted_count == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub overall_accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_users_accuracy: f64,
    pub macro_producers_accuracy: f64,
    pub macro_f1: f64,
    /// Classes with neither truth nor predictions, left out of the macro means.
    pub absent_classes: Vec<usize>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> f64 {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Overall accuracy, per-class accuracies and F1, and their unweighted
/// class means. Metrics are fractions in `[0, 1]`.
pub fn classification_metrics(cm: &ConfusionMatrix) -> Result<ClassificationReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::invalid("confusion matrix is empty"));
    }
    let k = cm.classes();
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = cm.get(c, c);
            let true_count = cm.row_total(c);
            let predicted_count = cm.column_total(c);
            ClassMetrics {
                users_accuracy: ratio(tp, predicted_count),
                producers_accuracy: ratio(tp, true_count),
                f1: ratio(2 * tp, true_count + predicted_count),
                true_count,
                predicted_count,
            }
        })
        .collect();
    let absent_classes: Vec<usize> = (0..k).filter(|&c| per_class[c].is_absent()).collect();
    if !absent_classes.is_empty() {
        log::warn!("classes {absent_classes:?} are absent and excluded from macro averages");
    }
    let trace: u64 = (0..k).map(|c| cm.get(c, c)).sum();
    Ok(ClassificationReport {
        overall_accuracy: trace as f64 / total as f64,
        macro_users_accuracy: mean_defined(per_class.iter().map(|m| m.users_accuracy)),
        macro_producers_accuracy: mean_defined(per_class.iter().map(|m| m.producers_accuracy)),
        macro_f1: mean_defined(per_class.iter().map(|m| m.f1)),
        per_class,
        absent_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn identity_is_perfect() {
        let cm = ConfusionMatrix::from_rows(&[vec![3, 0], vec![0, 5]]).unwrap();
        let r = classification_metrics(&cm).unwrap();
        assert_eq!(r.overall_accuracy, 1.0);
        assert_eq!((r.macro_f1, r.macro_producers_accuracy, r.macro_users_accuracy), (1.0, 1.0, 1.0));
    }

    #[test]
    fn absent_class_is_excluded() {
        let cm = ConfusionMatrix::from_rows(&[vec![3, 1, 0], vec![1, 5, 0], vec![0, 0, 0]]).unwrap();
        let r = classification_metrics(&cm).unwrap();
        assert_eq!(r.absent_classes, vec![2]);
        assert_eq!(r.per_class[2].f1, None);
        let f0 = 6.0 / 8.0;
        let f1 = 10.0 / 12.0;
        assert!((r.macro_f1 - (f0 + f1) / 2.0).abs() < 1e-15);
        assert!(classification_metrics(&ConfusionMatrix::new(2).unwrap()).is_err());
    }

    #[test]
    fn accumulate_matches_naive_and_merges() {
        let mut rng = SeededRng::new(11);
        let truth: Vec<u32> = (0..1000).map(|_| rng.below(4) as u32).collect();
        let pred: Vec<u32> = (0..1000).map(|_| rng.below(4) as u32).collect();
        let cm = accumulate_confusion(&pred, &truth, 4).unwrap();
        let mut naive = vec![vec![0u64; 4]; 4];
        for (t, p) in truth.iter().zip(&pred) {
            naive[*t as usize][*p as usize] += 1;
        }
        assert_eq!(cm.rows(), naive);
        let mut halves = accumulate_confusion(&pred[..500], &truth[..500], 4).unwrap();
        halves.merge(&accumulate_confusion(&pred[500..], &truth[500..], 4).unwrap()).unwrap();
        assert_eq!(halves, cm);
        let perfect = accumulate_confusion(&truth, &truth, 4).unwrap();
        assert!((0..4).all(|i| (0..4).all(|j| i == j || perfect.get(i, j) == 0)));
        assert!(accumulate_confusion(&[4], &[0], 4).is_err());
    }
}
