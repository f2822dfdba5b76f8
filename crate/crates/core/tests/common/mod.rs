//! Oracles shared by several integration tests.

#![allow(dead_code)]

use fmsr_core::SeededRng;

/// Cyclic Jacobi eigendecomposition of a small symmetric matrix.
/// Returns eigenpairs sorted by descending eigenvalue.
pub fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> Vec<(f64, Vec<f64>)> {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vkp, vkq) = (row[p], row[q]);
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..n).map(|k| (a[k][k], v.iter().map(|row| row[k]).collect())).collect();
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
    pairs
}

/// Largest principal angle between the row spaces of two orthonormal bases.
pub fn max_principal_angle(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    // cos of the largest angle is the smallest singular value of AᵀB; for
    // small k use the eigenvalues of (AᵀB)(AᵀB)ᵀ.
    let k = a.len();
    let m: Vec<Vec<f64>> = a.iter().map(|ra| b.iter().map(|rb| ra.iter().zip(rb).map(|(x, y)| x * y).sum()).collect()).collect();
    let mmt: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| (0..k).map(|l| m[i][l] * m[j][l]).sum()).collect()).collect();
    let smallest = jacobi_eigen(mmt).last().unwrap().0.clamp(0.0, 1.0);
    smallest.sqrt().acos()
}

/// Four correlated features with a clear spectral gap, offset by 5.
pub fn correlated_samples(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = SeededRng::new(seed);
    let scales = [3.0, 2.0, 1.0, 0.3];
    let mix = [
        [0.6, 0.4, -0.5, 0.2],
        [0.1, 0.7, 0.3, -0.4],
        [-0.5, 0.2, 0.6, 0.3],
        [0.3, -0.2, 0.4, 0.8],
    ];
    let mut out = Vec::with_capacity(n * 4);
    for _ in 0..n {
        let z: Vec<f64> = scales.iter().map(|s| s * rng.standard_normal()).collect();
        for row in &mix {
            out.push(5.0 + row.iter().zip(&z).map(|(m, v)| m * v).sum::<f64>());
        }
    }
    out
}
