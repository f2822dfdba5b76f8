//! Adversarial, perceptual and focal objectives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ConvParams, ParamAllocator, Tape};
use crate::resample::IncrementalPcaModel;
use crate::rng::SeededRng;
use crate::tensor::{ImageTensor, Shape};

const SCORE_CLAMP: f64 = 1e-7;
const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanLossWeights {
    pub perceptual: f64,
    pub adversarial: f64,
}

impl Default for GanLossWeights {
    fn default() -> Self {
        Self {
            perceptual: 1.0,
            adversarial: 0.1,
        }
    }
}

impl GanLossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("perceptual", self.perceptual), ("adversarial", self.adversarial)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("{name} weight must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Weighted terms of the generator objective. `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorLoss {
    pub pixel: f64,
    pub perceptual: f64,
    pub adversarial: f64,
    pub total: f64,
}

fn check_scores(scores: &ImageTensor, what: &str) -> Result<()> {
    if let Some(v) = scores.data().iter().find(|&&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::invalid(format!("{what} must be probabilities in (0,1), found {v}")));
    }
    Ok(())
}

fn clamp_scores(scores: &ImageTensor, what: &str, upper: f64) -> Vec<f64> {
    let mut clamped = 0usize;
    let out = scores
        .data()
        .iter()
        .map(|&s| {
            let c = s.clamp(SCORE_CLAMP, upper);
            if c != s {
                clamped += 1;
            }
            c
        })
        .collect();
    if clamped > 0 {
        log::warn!("{clamped} {what} clamped to [{SCORE_CLAMP}, {upper}]");
    }
    out
}

/// Mean per-layer L1 distance between two feature stacks.
pub fn feature_distance(a: &[ImageTensor], b: &[ImageTensor]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("{} vs {} feature layers", a.len(), b.len())));
    }
    let mut sum = 0.0;
    for (fa, fb) in a.iter().zip(b) {
        sum += fa.mean_abs_diff(fb)?;
    }
    Ok(sum)
}

/// Pixel L1 plus weighted feature distance plus the non-saturating
/// adversarial term `-mean log D(ŷ)`.
pub fn generator_loss(
    y: &ImageTensor,
    y_hat: &ImageTensor,
    disc_scores: &ImageTensor,
    features_y: &[ImageTensor],
    features_y_hat: &[ImageTensor],
    weights: GanLossWeights,
) -> Result<GeneratorLoss> {
    weights.validate()?;
    check_scores(disc_scores, "discriminator scores")?;
    let pixel = y.mean_abs_diff(y_hat)?;
    let perceptual = weights.perceptual * feature_distance(features_y, features_y_hat)?;
    let scores = clamp_scores(disc_scores, "generator scores", 1.0);
    let mean_log = scores.iter().map(|s| s.ln()).sum::<f64>() / scores.len() as f64;
    let adversarial = -weights.adversarial * mean_log;
    Ok(GeneratorLoss {
        pixel,
        perceptual,
        adversarial,
        total: pixel + perceptual + adversarial,
    })
}

/// `-(mean log D(y) + mean log(1 - D(ŷ)))`, each mean taken over pixels.
pub fn discriminator_loss(real_scores: &ImageTensor, fake_scores: &ImageTensor) -> Result<f64> {
    check_scores(real_scores, "real scores")?;
    check_scores(fake_scores, "fake scores")?;
    let real = clamp_scores(real_scores, "real scores", 1.0 - SCORE_CLAMP);
    let fake = clamp_scores(fake_scores, "fake scores", 1.0 - SCORE_CLAMP);
    let real_term = real.iter().map(|s| s.ln()).sum::<f64>() / real.len() as f64;
    let fake_term = fake.iter().map(|s| (1.0 - s).ln()).sum::<f64>() / fake.len() as f64;
    Ok(-(real_term + fake_term))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self { gamma: 2.0 }
    }
}

/// Mean over pixels of `-(1 - p)^γ log p` with `p` the probability of the
/// labelled class. `probabilities` is `K×H×W`, `labels` is `H×W`.
pub fn focal_loss(probabilities: &ImageTensor, labels: &[u32], params: FocalParams) -> Result<f64> {
    let gamma = params.gamma;
    if !gamma.is_finite() || gamma < 0.0 {
        return Err(Error::invalid(format!("gamma must be finite and >= 0, got {gamma}")));
    }
    let shape = probabilities.shape();
    let plane = shape.plane();
    if labels.len() != plane {
        return Err(Error::shape(format!("{} labels for a {shape} probability map", labels.len())));
    }
    let data = probabilities.data();
    let mut floored = 0usize;
    let mut total = 0.0;
    for (p, &label) in labels.iter().enumerate() {
        let label = label as usize;
        if label >= shape.channels {
            return Err(Error::invalid(format!("label {label} out of range for {} classes", shape.channels)));
        }
        let sum: f64 = (0..shape.channels).map(|k| data[k * plane + p]).sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("probabilities at pixel {p} sum to {sum}")));
        }
        let mut pt = data[label * plane + p];
        if pt < PROB_FLOOR {
            pt = PROB_FLOOR;
            floored += 1;
        }
        total -= (1.0 - pt).powf(gamma) * pt.ln();
    }
    if floored > 0 {
        log::warn!("{floored} true-class probabilities floored at {PROB_FLOOR}");
    }
    Ok(total / plane as f64)
}

/// Maps an image to a stack of feature maps, one per layer.
pub trait FeatureExtractor: Sync {
    fn layer_count(&self) -> usize;
    fn extract(&self, image: &ImageTensor) -> Result<Vec<ImageTensor>>;
}

/// Stack of fixed random 3×3 conv + SiLU layers with 2× average pooling
/// between layers while the spatial size allows it.
#[derive(Debug, Clone)]
pub struct RandomConvExtractor {
    in_channels: usize,
    layers: Vec<ConvParams>,
    params: Vec<f64>,
}

impl RandomConvExtractor {
    pub fn new(in_channels: usize, widths: &[usize], seed: u64) -> Result<Self> {
        if in_channels == 0 || widths.is_empty() || widths.contains(&0) {
            return Err(Error::invalid("extractor needs positive channel counts and at least one layer"));
        }
        let mut alloc = ParamAllocator::default();
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = in_channels;
        for &w in widths {
            layers.push(ConvParams::allocate(&mut alloc, prev, w));
            prev = w;
        }
        let mut rng = SeededRng::new(seed);
        let mut params = vec![0.0; alloc.total()];
        for layer in &layers {
            let std = (1.0 / (layer.in_channels * 9) as f64).sqrt();
            let range = layer.weight;
            for v in &mut params[range.offset..range.offset + range.len] {
                *v = std * rng.standard_normal();
            }
        }
        Ok(Self {
            in_channels,
            layers,
            params,
        })
    }
}

impl FeatureExtractor for RandomConvExtractor {
    fn layer_count(&self) -> usize {
        self.layers.len()
    }

    fn extract(&self, image: &ImageTensor) -> Result<Vec<ImageTensor>> {
        if image.channels() != self.in_channels {
            return Err(Error::shape(format!(
                "extractor expects {} channels, got {}",
                self.in_channels,
                image.channels()
            )));
        }
        let mut tape = Tape::new();
        let (mut h, mut w) = (image.height(), image.width());
        let mut node = tape.input(image.data().to_vec());
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 && h % 2 == 0 && w % 2 == 0 && h >= 4 && w >= 4 {
                node = tape.avg_pool2(node, layer.in_channels, h, w);
                h /= 2;
                w /= 2;
            }
            node = tape.conv3x3(&self.params, node, *layer, h, w);
            node = tape.silu(node);
            let shape = Shape::new(layer.out_channels, h, w);
            out.push(ImageTensor::new(shape, tape.value(node).to_vec())?);
        }
        Ok(out)
    }
}

/// Learned-perceptual-style distance: per layer, the squared difference of
/// feature vectors summed over channels, averaged over positions and
/// scaled by `layer_weights[l]`. Calibrated weights are not provided here.
pub fn perceptual_distance(
    extractor: &dyn FeatureExtractor,
    a: &ImageTensor,
    b: &ImageTensor,
    layer_weights: &[f64],
) -> Result<f64> {
    if layer_weights.len() != extractor.layer_count() {
        return Err(Error::shape(format!(
            "{} layer weights for {} layers",
            layer_weights.len(),
            extractor.layer_count()
        )));
    }
    let fa = extractor.extract(a)?;
    let fb = extractor.extract(b)?;
    let mut total = 0.0;
    for ((la, lb), w) in fa.iter().zip(&fb).zip(layer_weights) {
        let plane = la.shape().plane();
        let sq: f64 = la.data().iter().zip(lb.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        total += w * sq / plane as f64;
    }
    Ok(total)
}

/// Projects every pixel's band vector onto the model's leading components,
/// giving one output band per component.
pub fn pca_feature_adapter(image: &ImageTensor, model: &IncrementalPcaModel) -> Result<ImageTensor> {
    let shape = image.shape();
    if shape.channels != model.n_features() {
        return Err(Error::shape(format!(
            "PCA model expects {} bands, image has {}",
            model.n_features(),
            shape.channels
        )));
    }
    let plane = shape.plane();
    let k = model.n_components();
    let mut out = vec![0.0; k * plane];
    let mut pixel = vec![0.0; shape.channels];
    for p in 0..plane {
        for (c, v) in pixel.iter_mut().enumerate() {
            *v = image.data()[c * plane + p];
        }
        for (j, score) in model.transform(&pixel)?.into_iter().enumerate() {
            out[j * plane + p] = score;
        }
    }
    ImageTensor::new(shape.with_channels(k), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Shape, v: Vec<f64>) -> ImageTensor {
        ImageTensor::new(shape, v).unwrap()
    }

    #[test]
    fn perfect_generator_has_zero_loss() {
        let s = Shape::new(1, 2, 2);
        let y = t(s, vec![0.1, -0.2, 0.3, 0.4]);
        let feats = vec![y.clone()];
        let d = ImageTensor::filled(s, 1.0).unwrap();
        let l = generator_loss(&y, &y, &d, &feats, &feats, GanLossWeights::default()).unwrap();
        assert!(l.total.abs() < 1e-12, "{l:?}");
    }

    #[test]
    fn zero_weights_reduce_to_l1() {
        let s = Shape::new(1, 2, 2);
        let y = t(s, vec![0.0, 1.0, 2.0, 3.0]);
        let yh = t(s, vec![1.0, 1.0, 1.0, 1.0]);
        let d = ImageTensor::filled(s, 0.3).unwrap();
        let w = GanLossWeights {
            perceptual: 0.0,
            adversarial: 0.0,
        };
        let l = generator_loss(&y, &yh, &d, &[y.clone()], &[d.clone()], w).unwrap();
        assert_eq!(l.total, 1.0);
    }

    #[test]
    fn hand_computed_two_by_two() {
        let s = Shape::new(1, 2, 2);
        let y = t(s, vec![0.0, 1.0, 2.0, 3.0]);
        let yh = t(s, vec![0.5, 1.0, 1.0, 3.0]);
        // features: 1x1x2 maps
        let fy = t(Shape::new(1, 1, 2), vec![1.0, 2.0]);
        let fyh = t(Shape::new(1, 1, 2), vec![2.0, 2.5]);
        let d = t(s, vec![0.5, 0.5, 0.25, 1.0]);
        let l = generator_loss(&y, &yh, &d, &[fy], &[fyh], GanLossWeights::default()).unwrap();
        let pixel = (0.5 + 0.0 + 1.0 + 0.0) / 4.0;
        let percep = (1.0 + 0.5) / 2.0;
        let adv = -0.1 * (2.0 * 0.5f64.ln() + 0.25f64.ln() + 0.0) / 4.0;
        assert!((l.pixel - pixel).abs() < 1e-15);
        assert!((l.perceptual - percep).abs() < 1e-15);
        assert!((l.adversarial - adv).abs() < 1e-15);
        assert!((l.total - (pixel + percep + adv)).abs() < 1e-12);
    }

    #[test]
    fn scores_outside_unit_interval_rejected() {
        let s = Shape::new(1, 1, 2);
        let y = ImageTensor::zeros(s).unwrap();
        let d = t(s, vec![0.5, 1.5]);
        assert!(generator_loss(&y, &y, &d, &[], &[], GanLossWeights::default()).is_err());
        assert!(discriminator_loss(&d, &y).is_err());
    }

    #[test]
    fn discriminator_half_scores() {
        let s = Shape::new(1, 3, 3);
        let h = ImageTensor::filled(s, 0.5).unwrap();
        let l = discriminator_loss(&h, &h).unwrap();
        assert!((l - 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn discriminator_perfect_limit() {
        let s = Shape::new(1, 2, 2);
        let mut prev = f64::INFINITY;
        for delta in [1e-1, 1e-2, 1e-3, 1e-5] {
            let real = ImageTensor::filled(s, 1.0 - delta).unwrap();
            let fake = ImageTensor::filled(s, delta).unwrap();
            let l = discriminator_loss(&real, &fake).unwrap();
            assert!(l > 0.0 && l < prev);
            prev = l;
        }
        assert!(prev < 1e-4);
    }

    #[test]
    fn discriminator_label_flip_symmetry() {
        let s = Shape::new(1, 2, 2);
        let real = t(s, vec![0.9, 0.8, 0.6, 0.7]);
        let fake = t(s, vec![0.2, 0.1, 0.4, 0.3]);
        let a = discriminator_loss(&real, &fake).unwrap();
        let b = discriminator_loss(&fake.map(|v| 1.0 - v), &real.map(|v| 1.0 - v)).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn exact_zero_and_one_scores_are_clamped() {
        let s = Shape::new(1, 1, 2);
        let real = t(s, vec![1.0, 0.0]);
        let fake = t(s, vec![0.0, 1.0]);
        assert!(discriminator_loss(&real, &fake).unwrap().is_finite());
    }

    fn two_class(p: &[f64]) -> ImageTensor {
        let mut v: Vec<f64> = p.to_vec();
        v.extend(p.iter().map(|x| 1.0 - x));
        t(Shape::new(2, 1, p.len()), v)
    }

    #[test]
    fn focal_values() {
        let probs = two_class(&[0.5]);
        let l = focal_loss(&probs, &[0], FocalParams::default()).unwrap();
        assert!((l - 0.25 * 2f64.ln()).abs() < 1e-15);
        assert!((l - 0.17329).abs() < 1e-5);
        let sure = two_class(&[1.0]);
        assert_eq!(focal_loss(&sure, &[0], FocalParams::default()).unwrap(), 0.0);
    }

    #[test]
    fn focal_gamma_zero_is_cross_entropy() {
        let probs = two_class(&[0.3, 0.9, 0.05]);
        let labels = [0, 1, 0];
        let ce = -(0.3f64.ln() + 0.1f64.ln() + 0.05f64.ln()) / 3.0;
        let l = focal_loss(&probs, &labels, FocalParams { gamma: 0.0 }).unwrap();
        assert!((l - ce).abs() < 1e-15);
    }

    #[test]
    fn focal_rejects_bad_inputs() {
        let probs = two_class(&[0.3]);
        assert!(focal_loss(&probs, &[2], FocalParams::default()).is_err());
        assert!(focal_loss(&probs, &[0, 1], FocalParams::default()).is_err());
        let bad = t(Shape::new(2, 1, 1), vec![0.3, 0.3]);
        assert!(focal_loss(&bad, &[0], FocalParams::default()).is_err());
        assert!(focal_loss(&probs, &[0], FocalParams { gamma: -1.0 }).is_err());
        let zero = two_class(&[0.0]);
        let l = focal_loss(&zero, &[0], FocalParams::default()).unwrap();
        assert!((l - (-(1e-12f64).ln())).abs() < 1e-6);
    }

    #[test]
    fn random_extractor_is_deterministic() {
        let img = ImageTensor::from_fn(Shape::new(3, 16, 16), |c, y, x| {
            ((c + 2 * y + 3 * x) as f64 * 0.1).sin()
        })
        .unwrap();
        let e = RandomConvExtractor::new(3, &[4, 8, 8], 7).unwrap();
        let a = e.extract(&img).unwrap();
        let b = RandomConvExtractor::new(3, &[4, 8, 8], 7).unwrap().extract(&img).unwrap();
        assert_eq!(a, b);
        let shapes: Vec<Shape> = a.iter().map(|f| f.shape()).collect();
        assert_eq!(shapes, vec![Shape::new(4, 16, 16), Shape::new(8, 8, 8), Shape::new(8, 4, 4)]);
        assert_eq!(perceptual_distance(&e, &img, &img, &[1.0; 3]).unwrap(), 0.0);
        let other = img.map(|v| v + 0.5);
        assert!(perceptual_distance(&e, &img, &other, &[1.0; 3]).unwrap() > 0.0);
        assert!(e.extract(&ImageTensor::zeros(Shape::new(2, 8, 8)).unwrap()).is_err());
    }
}
