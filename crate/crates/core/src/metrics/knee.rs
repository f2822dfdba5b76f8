use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Curvature {
    Concave,
    Convex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Increasing,
    Decreasing,
}

impl FromStr for Curvature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "concave" => Ok(Self::Concave),
            "convex" => Ok(Self::Convex),
            _ => Err(Error::invalid(format!("unknown curvature '{s}'"))),
        }
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "increasing" | "inc" => Ok(Self::Increasing),
            "decreasing" | "dec" => Ok(Self::Decreasing),
            _ => Err(Error::invalid(format!("unknown direction '{s}'"))),
        }
    }
}

impl fmt::Display for Curvature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Concave => "concave",
            Self::Convex => "convex",
        })
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Increasing => "increasing",
            Self::Decreasing => "decreasing",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KneeResult {
    pub knee_index: Option<usize>,
    pub knee_x: Option<f64>,
    pub knee_y: Option<f64>,
    pub sensitivity: f64,
    pub curvature: Curvature,
    pub direction: Direction,
    /// Normalized difference curve, indexed like the input.
    pub difference: Vec<f64>,
}

fn unit_scale(v: &[f64]) -> Option<Vec<f64>> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    (span > 0.0).then(|| v.iter().map(|x| (x - lo) / span).collect())
}

/// Kneedle knee detection (offline mode: the first knee is returned).
pub fn kneedle(
    xs: &[f64],
    ys: &[f64],
    sensitivity: f64,
    curvature: Curvature,
    direction: Direction,
) -> Result<KneeResult> {
    let n = xs.len();
    if n != ys.len() {
        return Err(Error::shape(format!("{n} x values vs {} y values", ys.len())));
    }
    if n < 3 {
        return Err(Error::invalid("knee detection needs at least three points"));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("knee curve".into()));
    }
    if xs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("x values must be strictly increasing"));
    }
    if !(sensitivity >= 0.0 && sensitivity.is_finite()) {
        return Err(Error::invalid(format!("sensitivity must be >= 0, got {sensitivity}")));
    }
    let mut result = KneeResult {
        knee_index: None,
        knee_x: None,
        knee_y: None,
        sensitivity,
        curvature,
        direction,
        difference: vec![0.0; n],
    };
    let xn = unit_scale(xs).expect("strictly increasing xs have positive span");
    let Some(yn) = unit_scale(ys) else {
        return Ok(result);
    };

    // Orient so the curve is concave and increasing in transformed x.
    let flip_x = matches!(
        (curvature, direction),
        (Curvature::Concave, Direction::Decreasing) | (Curvature::Convex, Direction::Increasing)
    );
    let flip_y = curvature == Curvature::Convex;
    let orig = |i: usize| if flip_x { n - 1 - i } else { i };
    let tx: Vec<f64> = (0..n).map(|i| if flip_x { 1.0 - xn[orig(i)] } else { xn[i] }).collect();
    let ty: Vec<f64> = (0..n).map(|i| if flip_y { 1.0 - yn[orig(i)] } else { yn[orig(i)] }).collect();
    let diff: Vec<f64> = ty.iter().zip(&tx).map(|(y, x)| y - x).collect();
    for i in 0..n {
        result.difference[orig(i)] = diff[i];
    }

    let step = tx.windows(2).map(|w| w[1] - w[0]).sum::<f64>() / (n - 1) as f64;
    let mut candidate: Option<(usize, f64)> = None;
    for j in 1..n {
        let is_max = j + 1 < n && diff[j] > diff[j - 1] && diff[j] >= diff[j + 1];
        if is_max {
            candidate = Some((j, diff[j] - sensitivity * step));
            continue;
        }
        if let Some((idx, threshold)) = candidate {
            if diff[j] < threshold {
                let k = orig(idx);
                result.knee_index = Some(k);
                result.knee_x = Some(xs[k]);
                result.knee_y = Some(ys[k]);
                break;
            }
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn inverse_curve_knee() {
        let xs = grid(20, 0.1, 1.0);
        let ys: Vec<f64> = xs.iter().map(|x| -1.0 / x).collect();
        let r = kneedle(&xs, &ys, 1.0, Curvature::Concave, Direction::Increasing).unwrap();
        let k = r.knee_index.unwrap();
        // Brute-force maximum of the normalized difference curve.
        let best = (0..20)
            .max_by(|&a, &b| {
                let d = |i: usize| (ys[i] + 10.0) / 9.0 - (xs[i] - 0.1) / 0.9;
                d(a).total_cmp(&d(b))
            })
            .unwrap();
        assert!(k.abs_diff(best) <= 1);
        assert!((r.knee_x.unwrap() - 0.1f64.sqrt()).abs() <= 0.9 / 19.0);
    }

    #[test]
    fn straight_line_has_no_knee() {
        let xs = grid(10, 0.0, 1.0);
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x + 1.0).collect();
        for (c, d) in [
            (Curvature::Concave, Direction::Increasing),
            (Curvature::Convex, Direction::Decreasing),
        ] {
            assert_eq!(kneedle(&xs, &ys, 1.0, c, d).unwrap().knee_index, None);
        }
        let flat = vec![2.0; 10];
        assert_eq!(kneedle(&xs, &flat, 1.0, Curvature::Convex, Direction::Decreasing).unwrap().knee_index, None);
    }

    #[test]
    fn convex_decreasing_matches_mirrored_concave_increasing() {
        let ts: Vec<f64> = (1..=30).map(|t| t as f64).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 1.0 / t + 0.2).collect();
        let r = kneedle(&ts, &ys, 1.0, Curvature::Convex, Direction::Decreasing).unwrap();
        let flipped: Vec<f64> = ys.iter().map(|y| -y).collect();
        let r2 = kneedle(&ts, &flipped, 1.0, Curvature::Concave, Direction::Increasing).unwrap();
        assert!(r.knee_index.is_some());
        assert_eq!(r.knee_index, r2.knee_index);
    }

    #[test]
    fn all_orientations_find_the_same_bend() {
        // One concave-increasing shape, mirrored into the other three cases.
        let xs = grid(25, 0.0, 1.0);
        let base: Vec<f64> = xs.iter().map(|x| 1.0 - (-6.0 * x).exp()).collect();
        let r = kneedle(&xs, &base, 1.0, Curvature::Concave, Direction::Increasing).unwrap();
        let k = r.knee_index.unwrap();
        let rev: Vec<f64> = base.iter().rev().copied().collect();
        let neg: Vec<f64> = base.iter().map(|v| -v).collect();
        let neg_rev: Vec<f64> = rev.iter().map(|v| -v).collect();
        assert_eq!(kneedle(&xs, &neg, 1.0, Curvature::Convex, Direction::Decreasing).unwrap().knee_index, Some(k));
        assert_eq!(kneedle(&xs, &rev, 1.0, Curvature::Concave, Direction::Decreasing).unwrap().knee_index, Some(24 - k));
        assert_eq!(kneedle(&xs, &neg_rev, 1.0, Curvature::Convex, Direction::Increasing).unwrap().knee_index, Some(24 - k));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(kneedle(&[0.0, 1.0], &[0.0, 1.0], 1.0, Curvature::Concave, Direction::Increasing).is_err());
        assert!(kneedle(&[0.0, 1.0, 1.0], &[0.0, 1.0, 2.0], 1.0, Curvature::Concave, Direction::Increasing).is_err());
        assert!("sideways".parse::<Direction>().is_err());
        assert_eq!("dec".parse::<Direction>().unwrap(), Direction::Decreasing);
    }
}
