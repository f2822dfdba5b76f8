use fmsr_core::objectives::pca_feature_adapter;
use fmsr_core::resample::IncrementalPcaModel;
use fmsr_core::{ImageTensor, SeededRng, Shape};

mod common;
use common::{correlated_samples, jacobi_eigen, max_principal_angle};

fn batch_pca(data: &[f64], d: usize) -> (Vec<f64>, Vec<(f64, Vec<f64>)>) {
    let n = data.len() / d;
    let mut mean = vec![0.0; d];
    for row in data.chunks(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n as f64;
        }
    }
    let mut cov = vec![vec![0.0; d]; d];
    for row in data.chunks(d) {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += (row[i] - mean[i]) * (row[j] - mean[j]);
            }
        }
    }
    (mean, jacobi_eigen(cov))
}

fn model_rows(model: &IncrementalPcaModel) -> Vec<Vec<f64>> {
    (0..model.n_components()).map(|i| model.component(i).to_vec()).collect()
}

#[test]
fn single_batch_matches_batch_pca() {
    let data = correlated_samples(400, 1);
    let mut model = IncrementalPcaModel::new(4, 3).unwrap();
    model.partial_fit(&data).unwrap();
    let (mean, eig) = batch_pca(&data, 4);
    for (m, e) in model.mean().iter().zip(&mean) {
        assert!((m - e).abs() < 1e-12);
    }
    let total: f64 = eig.iter().map(|p| p.0).sum();
    for k in 0..3 {
        let dot: f64 = model.component(k).iter().zip(&eig[k].1).map(|(a, b)| a * b).sum();
        assert!((dot.abs() - 1.0).abs() < 1e-9, "component {k}: |dot| = {}", dot.abs());
        assert!((model.explained_variance_ratio()[k] - eig[k].0 / total).abs() < 1e-9);
        assert!((model.explained_variance()[k] - eig[k].0 / 399.0).abs() < 1e-9);
    }
}

#[test]
fn two_batches_match_full_batch_subspace() {
    let data = correlated_samples(1000, 2);
    let mut model = IncrementalPcaModel::new(4, 3).unwrap();
    model.partial_fit(&data[..2000]).unwrap();
    model.partial_fit(&data[2000..]).unwrap();
    assert_eq!(model.samples_seen(), 1000);
    let (_, eig) = batch_pca(&data, 4);
    let reference: Vec<Vec<f64>> = eig[..3].iter().map(|p| p.1.clone()).collect();
    let angle = max_principal_angle(&model_rows(&model), &reference);
    assert!(angle < 1e-3, "principal angle {angle}");
    let ratios = model.explained_variance_ratio();
    assert!(ratios.iter().sum::<f64>() <= 1.0 + 1e-12);
    assert!(ratios.windows(2).all(|w| w[0] >= w[1]));
    assert!(ratios.iter().all(|r| (0.0..=1.0).contains(r)));
}

#[test]
fn stays_orthonormal_across_many_updates() {
    let data = correlated_samples(2000, 3);
    let mut model = IncrementalPcaModel::new(4, 3).unwrap();
    for chunk in data.chunks(4 * 37) {
        model.partial_fit(chunk).unwrap();
        assert!(model.orthonormality_error() < 1e-10);
    }
}

#[test]
fn rejects_bad_batches() {
    let mut model = IncrementalPcaModel::new(4, 3).unwrap();
    assert!(model.partial_fit(&[]).is_err());
    assert!(model.partial_fit(&[1.0, 2.0, 3.0]).is_err());
    assert!(model.partial_fit(&[1.0, 2.0, f64::NAN, 4.0]).is_err());
    assert!(IncrementalPcaModel::new(4, 5).is_err());
}

fn image_from_samples(samples: &[f64], h: usize, w: usize) -> ImageTensor {
    ImageTensor::from_fn(Shape::new(4, h, w), |c, y, x| samples[(y * w + x) * 4 + c]).unwrap()
}

#[test]
fn adapter_is_isometric_on_a_three_dim_subspace() {
    let mut rng = SeededRng::new(4);
    let basis = [[0.5, 0.5, 0.5, 0.5], [0.5, -0.5, 0.5, -0.5], [0.5, 0.5, -0.5, -0.5]];
    let mut samples = Vec::new();
    for _ in 0..64 {
        let z = [rng.standard_normal() * 3.0, rng.standard_normal() * 2.0, rng.standard_normal()];
        for c in 0..4 {
            samples.push(1.0 + (0..3).map(|k| z[k] * basis[k][c]).sum::<f64>());
        }
    }
    let mut model = IncrementalPcaModel::new(4, 3).unwrap();
    model.partial_fit(&samples).unwrap();
    let img = image_from_samples(&samples, 8, 8);
    let proj = pca_feature_adapter(&img, &model).unwrap();
    assert_eq!(proj.shape(), Shape::new(3, 8, 8));
    let pix = |t: &ImageTensor, p: usize| -> Vec<f64> { (0..t.channels()).map(|c| t.channel(c)[p]).collect() };
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    for (p, q) in [(0, 1), (5, 40), (13, 63), (22, 7)] {
        let d_in = dist(&pix(&img, p), &pix(&img, q));
        let d_out = dist(&pix(&proj, p), &pix(&proj, q));
        assert!((d_in - d_out).abs() < 1e-9);
    }
}

#[test]
fn adapter_residual_variance_matches_unexplained_ratio() {
    let data = correlated_samples(256, 5);
    let mut model = IncrementalPcaModel::new(4, 3).unwrap();
    model.partial_fit(&data).unwrap();
    let img = image_from_samples(&data, 16, 16);
    let proj = pca_feature_adapter(&img, &model).unwrap();
    let mut resid = 0.0;
    let mut total = 0.0;
    for p in 0..256 {
        let scores: Vec<f64> = (0..3).map(|c| proj.channel(c)[p]).collect();
        let recon = model.inverse_transform(&scores).unwrap();
        for c in 0..4 {
            let x = img.channel(c)[p];
            resid += (x - recon[c]).powi(2);
            total += (x - model.mean()[c]).powi(2);
        }
    }
    let explained: f64 = model.explained_variance_ratio().iter().sum();
    assert!((resid / total - (1.0 - explained)).abs() < 1e-9);
}

#[test]
fn adapter_constant_image_and_band_mismatch() {
    let data = correlated_samples(100, 6);
    let mut model = IncrementalPcaModel::new(4, 3).unwrap();
    model.partial_fit(&data).unwrap();
    let img = ImageTensor::filled(Shape::new(4, 3, 3), 2.0).unwrap();
    let proj = pca_feature_adapter(&img, &model).unwrap();
    for c in 0..3 {
        let ch = proj.channel(c);
        assert!(ch.iter().all(|&v| v == ch[0]));
    }
    assert!(pca_feature_adapter(&ImageTensor::zeros(Shape::new(3, 2, 2)).unwrap(), &model).is_err());
}
