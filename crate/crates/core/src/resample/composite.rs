use crate::error::{Error, Result};
use crate::raster::GeoChip;
use crate::tensor::{ImageTensor, Shape};

/// Per-pixel mean over the valid observations of an aligned stack.
#[derive(Debug, Clone, PartialEq)]
pub struct Composite {
    pub mean: ImageTensor,
    pub counts: Vec<u32>,
    /// True where no observation was valid; `mean` holds 0 there.
    pub nodata: Vec<bool>,
}

impl Composite {
    pub fn into_chip(self, pixel_size_m: f64, origin_xy: (f64, f64)) -> Result<GeoChip> {
        let mask = self.nodata.iter().any(|&m| m).then_some(self.nodata);
        GeoChip::new(self.mean, pixel_size_m, origin_xy, mask)
    }
}

/// `valid[i][p]` marks pixel `p` of `stack[i]` as usable in every band.
pub fn masked_mean_composite(stack: &[ImageTensor], valid: &[Vec<bool>]) -> Result<Composite> {
    let first = stack.first().ok_or_else(|| Error::invalid("composite of an empty stack"))?;
    let shape: Shape = first.shape();
    if valid.len() != stack.len() {
        return Err(Error::shape(format!("{} masks for {} chips", valid.len(), stack.len())));
    }
    let plane = shape.plane();
    for (chip, mask) in stack.iter().zip(valid) {
        chip.require_shape(shape, "composite member")?;
        if mask.len() != plane {
            return Err(Error::shape(format!("mask of {} pixels for a {shape} grid", mask.len())));
        }
    }
    let mut counts = vec![0u32; plane];
    let mut sums = vec![0.0; shape.len()];
    for (chip, mask) in stack.iter().zip(valid) {
        for (p, _) in mask.iter().enumerate().filter(|(_, &ok)| ok) {
            counts[p] += 1;
            for c in 0..shape.channels {
                sums[c * plane + p] += chip.data()[c * plane + p];
            }
        }
    }
    for (i, s) in sums.iter_mut().enumerate() {
        let n = counts[i % plane];
        if n > 0 {
            *s /= n as f64;
        }
    }
    let nodata = counts.iter().map(|&n| n == 0).collect();
    Ok(Composite {
        mean: ImageTensor::new(shape, sums)?,
        counts,
        nodata,
    })
}

/// Composites georeferenced chips, treating their nodata masks as invalid.
pub fn composite_chips(chips: &[GeoChip]) -> Result<Composite> {
    let tensors: Vec<ImageTensor> = chips.iter().map(|c| c.tensor.clone()).collect();
    let valid: Vec<Vec<bool>> = chips
        .iter()
        .map(|c| match &c.nodata_mask {
            Some(m) => m.iter().map(|&nd| !nd).collect(),
            None => vec![true; c.tensor.shape().plane()],
        })
        .collect();
    masked_mean_composite(&tensors, &valid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn basic_cases() {
        let s = Shape::new(1, 1, 2);
        let a = ImageTensor::filled(s, 2.0).unwrap();
        let b = ImageTensor::filled(s, 4.0).unwrap();
        let one = masked_mean_composite(&[a.clone()], &[vec![true; 2]]).unwrap();
        assert_eq!(one.mean, a);
        let two = masked_mean_composite(&[a.clone(), b.clone()], &[vec![true; 2], vec![true, false]]).unwrap();
        assert_eq!(two.mean.data(), &[3.0, 2.0]);
        assert_eq!(two.counts, vec![2, 1]);
        let none = masked_mean_composite(&[a], &[vec![false, true]]).unwrap();
        assert_eq!(none.nodata, vec![true, false]);
        assert!(masked_mean_composite(&[], &[]).is_err());
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = SeededRng::new(9);
        let s = Shape::new(3, 5, 7);
        let stack: Vec<ImageTensor> = (0..6)
            .map(|_| ImageTensor::from_fn(s, |_, _, _| rng.standard_normal()).unwrap())
            .collect();
        let masks: Vec<Vec<bool>> = (0..6).map(|_| (0..35).map(|_| rng.uniform() < 0.5).collect()).collect();
        let comp = masked_mean_composite(&stack, &masks).unwrap();
        for c in 0..3 {
            for y in 0..5 {
                for x in 0..7 {
                    let vals: Vec<f64> = (0..6).filter(|&i| masks[i][y * 7 + x]).map(|i| stack[i].get(c, y, x)).collect();
                    let expected = if vals.is_empty() { 0.0 } else { vals.iter().sum::<f64>() / vals.len() as f64 };
                    assert!((comp.mean.get(c, y, x) - expected).abs() < 1e-12);
                    assert_eq!(comp.counts[y * 7 + x] as usize, vals.len());
                }
            }
        }
    }
}
