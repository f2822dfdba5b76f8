use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Principal components accumulated over a stream of sample batches.
///
/// Each update folds the previous components (scaled by their singular
/// values), the centred batch and a mean-shift correction row into one
/// scatter matrix and re-diagonalizes it, so memory stays `O(d²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementalPcaModel {
    n_features: usize,
    n_components: usize,
    mean: Vec<f64>,
    var: Vec<f64>,
    /// Row-major `n_components × n_features`.
    components: Vec<f64>,
    singular_values: Vec<f64>,
    explained_variance: Vec<f64>,
    explained_variance_ratio: Vec<f64>,
    samples_seen: u64,
}

impl IncrementalPcaModel {
    pub fn new(n_features: usize, n_components: usize) -> Result<Self> {
        if n_features == 0 || n_components == 0 || n_components > n_features {
            return Err(Error::invalid(format!(
                "need 0 < components ({n_components}) <= features ({n_features})"
            )));
        }
        Ok(Self {
            n_features,
            n_components,
            mean: vec![0.0; n_features],
            var: vec![0.0; n_features],
            components: vec![0.0; n_components * n_features],
            singular_values: vec![0.0; n_components],
            explained_variance: vec![0.0; n_components],
            explained_variance_ratio: vec![0.0; n_components],
            samples_seen: 0,
        })
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn component(&self, i: usize) -> &[f64] {
        &self.components[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    pub fn explained_variance_ratio(&self) -> &[f64] {
        &self.explained_variance_ratio
    }

    pub fn samples_seen(&self) -> u64 {
        self.samples_seen
    }

    /// Folds in a row-major `n × n_features` batch.
    pub fn partial_fit(&mut self, batch: &[f64]) -> Result<()> {
        let d = self.n_features;
        if batch.is_empty() || batch.len() % d != 0 {
            return Err(Error::shape(format!(
                "batch of {} values is not a nonempty multiple of {d} features",
                batch.len()
            )));
        }
        if let Some(v) = batch.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("PCA batch value {v}")));
        }
        let n = (batch.len() / d) as f64;
        let m = self.samples_seen as f64;
        let total = m + n;

        let mut batch_mean = vec![0.0; d];
        for row in batch.chunks(d) {
            for (acc, v) in batch_mean.iter_mut().zip(row) {
                *acc += v;
            }
        }
        batch_mean.iter_mut().for_each(|v| *v /= n);

        let mut scatter = DMatrix::<f64>::zeros(d, d);
        let mut batch_m2 = vec![0.0; d];
        for row in batch.chunks(d) {
            for i in 0..d {
                let di = row[i] - batch_mean[i];
                batch_m2[i] += di * di;
                for j in 0..=i {
                    scatter[(i, j)] += di * (row[j] - batch_mean[j]);
                }
            }
        }
        if self.samples_seen > 0 {
            for (k, &s) in self.singular_values.iter().enumerate() {
                let v = &self.components[k * d..(k + 1) * d];
                for i in 0..d {
                    for j in 0..=i {
                        scatter[(i, j)] += s * s * v[i] * v[j];
                    }
                }
            }
            let c = m * n / total;
            for i in 0..d {
                for j in 0..=i {
                    scatter[(i, j)] +=
                        c * (self.mean[i] - batch_mean[i]) * (self.mean[j] - batch_mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                scatter[(j, i)] = scatter[(i, j)];
            }
        }

        for i in 0..d {
            let delta = batch_mean[i] - self.mean[i];
            let m2 = m * self.var[i] + batch_m2[i] + delta * delta * m * n / total;
            self.var[i] = m2 / total;
            self.mean[i] += delta * n / total;
        }
        self.samples_seen += batch.len() as u64 / d as u64;

        let eig = SymmetricEigen::new(scatter);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut rows: Vec<Vec<f64>> = order[..self.n_components]
            .iter()
            .map(|&k| eig.eigenvectors.column(k).iter().copied().collect())
            .collect();
        orthonormalize(&mut rows);
        for row in &mut rows {
            let lead = row.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
            if lead < 0.0 {
                row.iter_mut().for_each(|v| *v = -*v);
            }
        }

        let total_var: f64 = self.var.iter().sum::<f64>() * total;
        for (i, &k) in order[..self.n_components].iter().enumerate() {
            let s2 = eig.eigenvalues[k].max(0.0);
            self.singular_values[i] = s2.sqrt();
            self.explained_variance[i] = if total > 1.0 { s2 / (total - 1.0) } else { 0.0 };
            self.explained_variance_ratio[i] = if total_var > 0.0 { (s2 / total_var).min(1.0) } else { 0.0 };
        }
        self.components = rows.concat();
        Ok(())
    }

    /// Component scores of one sample.
    pub fn transform(&self, sample: &[f64]) -> Result<Vec<f64>> {
        if sample.len() != self.n_features {
            return Err(Error::shape(format!(
                "sample has {} features, model expects {}",
                sample.len(),
                self.n_features
            )));
        }
        Ok((0..self.n_components)
            .map(|k| {
                self.component(k)
                    .iter()
                    .zip(sample.iter().zip(&self.mean))
                    .map(|(c, (x, mu))| c * (x - mu))
                    .sum()
            })
            .collect())
    }

    pub fn inverse_transform(&self, scores: &[f64]) -> Result<Vec<f64>> {
        if scores.len() != self.n_components {
            return Err(Error::shape(format!(
                "{} scores for {} components",
                scores.len(),
                self.n_components
            )));
        }
        let mut out = self.mean.clone();
        for (k, s) in scores.iter().enumerate() {
            for (o, c) in out.iter_mut().zip(self.component(k)) {
                *o += s * c;
            }
        }
        Ok(out)
    }

    /// Largest deviation of the component Gram matrix from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n_components {
            for j in 0..self.n_components {
                let dot: f64 = self.component(i).iter().zip(self.component(j)).map(|(a, b)| a * b).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }
}

/// Modified Gram-Schmidt, run twice for stability.
fn orthonormalize(rows: &mut [Vec<f64>]) {
    for _ in 0..2 {
        for i in 0..rows.len() {
            for j in 0..i {
                let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
                let prev = rows[j].clone();
                for (a, b) in rows[i].iter_mut().zip(&prev) {
                    *a -= dot * b;
                }
            }
            let norm = rows[i].iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                rows[i].iter_mut().for_each(|v| *v /= norm);
            }
        }
    }
}
