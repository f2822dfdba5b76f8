//! Sliding-window inference over rasters larger than a model's chip size.
//!
//! Windows are transformed in parallel and their outputs are committed in
//! window order into weighted-sum and weight-sum accumulators, so results
//! do not depend on the worker count. Accumulators cover a single band of
//! one window height; output rows are emitted as soon as no later window
//! can touch them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::LabelRaster;
use crate::tensor::{ImageTensor, Shape};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub height: usize,
    pub width: usize,
    pub window: usize,
    pub stride: usize,
    pub scale: usize,
    pub origins_y: Vec<usize>,
    pub origins_x: Vec<usize>,
}

fn axis_origins(len: usize, window: usize, stride: usize) -> Vec<usize> {
    let mut origins: Vec<usize> = (0..).map(|i| i * stride).take_while(|o| o + window <= len).collect();
    let last = *origins.last().expect("len >= window");
    if last + window < len {
        origins.push(len - window);
    }
    origins
}

/// Regular window grid with the final row and column snapped to the edge.
pub fn plan_windows(height: usize, width: usize, window: usize, stride: usize, scale: usize) -> Result<WindowPlan> {
    if window == 0 || stride == 0 || scale == 0 {
        return Err(Error::invalid("window, stride and scale must be positive"));
    }
    if stride > window {
        return Err(Error::invalid(format!("stride {stride} exceeds window {window}; pixels would be skipped")));
    }
    if height < window || width < window {
        return Err(Error::shape(format!("raster {height}x{width} is smaller than the {window}px window")));
    }
    Ok(WindowPlan {
        height,
        width,
        window,
        stride,
        scale,
        origins_y: axis_origins(height, window, stride),
        origins_x: axis_origins(width, window, stride),
    })
}

impl WindowPlan {
    pub fn window_hr(&self) -> usize {
        self.window * self.scale
    }

    pub fn len(&self) -> usize {
        self.origins_y.len() * self.origins_x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Window origins `(y, x)` in low-resolution pixels, row-major.
    pub fn windows(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.origins_y
            .iter()
            .flat_map(move |&y| self.origins_x.iter().map(move |&x| (y, x)))
    }

    /// Number of windows covering each low-resolution pixel.
    pub fn coverage(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.height * self.width];
        for (oy, ox) in self.windows() {
            for y in oy..oy + self.window {
                for c in &mut counts[y * self.width + ox..y * self.width + ox + self.window] {
                    *c += 1;
                }
            }
        }
        counts
    }
}

/// Separable Gaussian weights over a square window, floored to stay positive.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendKernel {
    pub size: usize,
    pub sigma: f64,
    pub floor: f64,
    weights: Vec<f64>,
}

impl BlendKernel {
    pub const DEFAULT_FLOOR: f64 = 1e-6;

    pub fn new(size: usize, sigma: f64, floor: f64) -> Result<Self> {
        if size == 0 || !(sigma > 0.0 && sigma.is_finite()) || !(floor > 0.0) {
            return Err(Error::invalid(format!("invalid blend kernel: size {size}, sigma {sigma}, floor {floor}")));
        }
        let c = (size as f64 - 1.0) / 2.0;
        let mut weights = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                let (dy, dx) = (y as f64 - c, x as f64 - c);
                let w = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
                weights.push(w.max(floor));
            }
        }
        Ok(Self {
            size,
            sigma,
            floor,
            weights,
        })
    }

    /// `σ = window_hr / 8` with the default floor.
    pub fn for_plan(plan: &WindowPlan) -> Result<Self> {
        let size = plan.window_hr();
        Self::new(size, size as f64 / 8.0, Self::DEFAULT_FLOOR)
    }

    pub fn weight(&self, y: usize, x: usize) -> f64 {
        self.weights[y * self.size + x]
    }
}

/// Chip-level operation applied to every window. The window index lets
/// stochastic transforms derive a per-window random stream.
pub trait ChipTransform: Sync {
    fn apply(&self, window_index: usize, chip: &ImageTensor) -> Result<ImageTensor>;
}

impl<F> ChipTransform for F
where
    F: Fn(usize, &ImageTensor) -> Result<ImageTensor> + Sync,
{
    fn apply(&self, window_index: usize, chip: &ImageTensor) -> Result<ImageTensor> {
        self(window_index, chip)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlendOptions {
    pub workers: usize,
    /// Windows transformed concurrently before each ordered commit.
    pub batch: usize,
}

impl BlendOptions {
    pub fn with_workers(workers: usize) -> Self {
        Self {
            workers,
            batch: 4 * workers.max(1),
        }
    }
}

/// One finished output row: weighted sums laid out channel-major
/// (`channels × width`) and the matching weight sums (`width`).
pub struct BlendedRow<'a> {
    pub y: usize,
    pub channels: usize,
    pub sums: &'a [f64],
    pub weights: &'a [f64],
}

struct Band {
    channels: usize,
    width: usize,
    base: usize,
    sums: Vec<f64>,
    weights: Vec<f64>,
}

impl Band {
    fn new(channels: usize, width: usize, rows: usize) -> Self {
        Self {
            channels,
            width,
            base: 0,
            sums: vec![0.0; rows * channels * width],
            weights: vec![0.0; rows * width],
        }
    }

    fn commit(&mut self, out: &ImageTensor, y0: usize, x0: usize, kernel: &BlendKernel) {
        let (c, w, n) = (self.channels, self.width, kernel.size);
        let plane = n * n;
        for dy in 0..n {
            let row = y0 - self.base + dy;
            let wrow = &mut self.weights[row * w + x0..row * w + x0 + n];
            for (dx, acc) in wrow.iter_mut().enumerate() {
                *acc += kernel.weight(dy, dx);
            }
            for ch in 0..c {
                let src = &out.data()[ch * plane + dy * n..ch * plane + (dy + 1) * n];
                let dst = &mut self.sums[(row * c + ch) * w + x0..(row * c + ch) * w + x0 + n];
                for (dx, (acc, v)) in dst.iter_mut().zip(src).enumerate() {
                    *acc += kernel.weight(dy, dx) * v;
                }
            }
        }
    }

    /// Emits rows up to (excluding) `until` and slides the band forward.
    fn flush(&mut self, until: usize, sink: &mut impl FnMut(BlendedRow<'_>) -> Result<()>) -> Result<()> {
        let (c, w) = (self.channels, self.width);
        let count = until - self.base;
        for r in 0..count {
            sink(BlendedRow {
                y: self.base + r,
                channels: c,
                sums: &self.sums[r * c * w..(r + 1) * c * w],
                weights: &self.weights[r * w..(r + 1) * w],
            })?;
        }
        self.sums.rotate_left(count * c * w);
        let len = self.sums.len();
        self.sums[len - count * c * w..].fill(0.0);
        self.weights.rotate_left(count * w);
        let len = self.weights.len();
        self.weights[len - count * w..].fill(0.0);
        self.base = until;
        Ok(())
    }
}

/// Core engine: transforms every window and streams blended rows to `sink`.
/// Returns the number of output channels.
pub fn blend_stream(
    raster: &ImageTensor,
    plan: &WindowPlan,
    kernel: &BlendKernel,
    transform: &dyn ChipTransform,
    options: BlendOptions,
    mut validate: impl FnMut(&ImageTensor) -> Result<()>,
    mut sink: impl FnMut(BlendedRow<'_>) -> Result<()>,
) -> Result<usize> {
    if raster.height() != plan.height || raster.width() != plan.width {
        return Err(Error::shape(format!(
            "raster {} does not match the {}x{} plan",
            raster.shape(),
            plan.height,
            plan.width
        )));
    }
    let wh = plan.window_hr();
    if kernel.size != wh {
        return Err(Error::shape(format!("kernel size {} differs from window {wh}", kernel.size)));
    }
    if options.workers == 0 || options.batch == 0 {
        return Err(Error::invalid("worker and batch counts must be positive"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let (height_hr, width_hr) = (plan.height * plan.scale, plan.width * plan.scale);
    let per_row = plan.origins_x.len();
    let mut band: Option<Band> = None;

    for (row_idx, &oy) in plan.origins_y.iter().enumerate() {
        let jobs: Vec<(usize, usize)> = plan.origins_x.iter().enumerate().map(|(j, &ox)| (row_idx * per_row + j, ox)).collect();
        for chunk in jobs.chunks(options.batch) {
            let outputs: Vec<Result<ImageTensor>> = pool.install(|| {
                chunk
                    .par_iter()
                    .map(|&(index, ox)| {
                        let chip = raster.crop(oy, ox, plan.window, plan.window)?;
                        transform.apply(index, &chip)
                    })
                    .collect()
            });
            for (&(index, ox), out) in chunk.iter().zip(outputs) {
                let out = out?;
                let channels = band.as_ref().map_or(out.channels(), |b| b.channels);
                let expected = Shape::new(channels, wh, wh);
                if out.shape() != expected {
                    return Err(Error::shape(format!(
                        "window {index} produced {}, expected {expected}",
                        out.shape()
                    )));
                }
                validate(&out)?;
                let band = band.get_or_insert_with(|| Band::new(channels, width_hr, wh));
                band.commit(&out, oy * plan.scale, ox * plan.scale, kernel);
            }
        }
        let next = plan.origins_y.get(row_idx + 1).map_or(height_hr, |&y| y * plan.scale);
        if let Some(band) = band.as_mut() {
            band.flush(next, &mut sink)?;
        }
    }
    Ok(band.map_or(0, |b| b.channels))
}

/// Weighted average of the transformed windows.
pub fn blend_apply(
    raster: &ImageTensor,
    plan: &WindowPlan,
    kernel: &BlendKernel,
    transform: &dyn ChipTransform,
    options: BlendOptions,
) -> Result<ImageTensor> {
    let (h, w) = (plan.height * plan.scale, plan.width * plan.scale);
    let mut data: Vec<f64> = Vec::new();
    let channels = blend_stream(raster, plan, kernel, transform, options, |_| Ok(()), |row| {
        if data.is_empty() {
            data = vec![0.0; row.channels * h * w];
        }
        for c in 0..row.channels {
            let dst = &mut data[(c * h + row.y) * w..(c * h + row.y + 1) * w];
            for ((d, s), wt) in dst.iter_mut().zip(&row.sums[c * w..(c + 1) * w]).zip(row.weights) {
                *d = s / wt;
            }
        }
        Ok(())
    })?;
    ImageTensor::new(Shape::new(channels, h, w), data)
}

/// Blends per-class probabilities and takes the argmax per pixel, lowest
/// class index winning ties.
pub fn blend_probabilities_and_argmax(
    raster: &ImageTensor,
    plan: &WindowPlan,
    kernel: &BlendKernel,
    classifier: &dyn ChipTransform,
    options: BlendOptions,
) -> Result<LabelRaster> {
    let (h, w) = (plan.height * plan.scale, plan.width * plan.scale);
    let mut labels = vec![0u32; h * w];
    let check = |out: &ImageTensor| -> Result<()> {
        let plane = out.shape().plane();
        for p in 0..plane {
            let sum: f64 = (0..out.channels()).map(|c| out.data()[c * plane + p]).sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!("class probabilities sum to {sum} at window pixel {p}")));
            }
        }
        Ok(())
    };
    blend_stream(raster, plan, kernel, classifier, options, check, |row| {
        for x in 0..w {
            let mut best = 0;
            for c in 1..row.channels {
                if row.sums[c * w + x] > row.sums[best * w + x] {
                    best = c;
                }
            }
            labels[row.y * w + x] = best as u32;
        }
        Ok(())
    })?;
    LabelRaster::new(h, w, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_origins() {
        let p = plan_windows(64, 64, 64, 32, 4).unwrap();
        assert_eq!(p.windows().collect::<Vec<_>>(), vec![(0, 0)]);
        let p = plan_windows(128, 128, 64, 32, 4).unwrap();
        assert_eq!(p.origins_y, vec![0, 32, 64]);
        assert_eq!(p.len(), 9);
        let p = plan_windows(100, 100, 64, 32, 4).unwrap();
        assert_eq!(p.origins_x, vec![0, 32, 36]);
        assert!(plan_windows(63, 100, 64, 32, 4).is_err());
        assert!(plan_windows(100, 100, 16, 32, 1).is_err());
    }

    #[test]
    fn coverage_counts() {
        let p = plan_windows(130, 97, 64, 32, 1).unwrap();
        let cov = p.coverage();
        assert!(cov.iter().all(|&c| c >= 1));
        // Interior pixels away from the first and last half-window.
        for y in 32..98 {
            for x in 32..65 {
                assert!(cov[y * 97 + x] >= 4, "({y},{x})");
            }
        }
    }

    #[test]
    fn kernel_shape() {
        let k = BlendKernel::new(256, 32.0, 1e-6).unwrap();
        let center = k.weight(127, 127);
        assert!(k.weights.iter().all(|&w| w > 0.0 && w <= center));
        assert_eq!(k.weight(0, 0), 1e-6);
        assert_eq!(k.weight(127, 127), k.weight(128, 128));
    }

    #[test]
    fn tie_goes_to_lowest_class() {
        let raster = ImageTensor::zeros(Shape::new(1, 2, 3)).unwrap();
        let plan = plan_windows(2, 3, 2, 1, 1).unwrap();
        assert_eq!(plan.len(), 2);
        let kernel = BlendKernel::new(2, 100.0, 1e-6).unwrap();
        // Constant kernel over the 2x2 window, so the shared column gets equal weights.
        assert_eq!(kernel.weight(0, 0), kernel.weight(1, 1));
        let votes = |index: usize, _: &ImageTensor| {
            let (a, b) = if index == 0 { (0.6, 0.4) } else { (0.4, 0.6) };
            ImageTensor::from_fn(Shape::new(2, 2, 2), |c, _, _| if c == 0 { a } else { b })
        };
        let labels = blend_probabilities_and_argmax(&raster, &plan, &kernel, &votes, BlendOptions::with_workers(2)).unwrap();
        assert_eq!(labels.labels, vec![0, 0, 1, 0, 0, 1]);
    }

    #[test]
    fn wrong_output_shape_is_rejected() {
        let raster = ImageTensor::zeros(Shape::new(1, 8, 8)).unwrap();
        let plan = plan_windows(8, 8, 4, 2, 2).unwrap();
        let kernel = BlendKernel::for_plan(&plan).unwrap();
        let bad = |_: usize, chip: &ImageTensor| Ok(chip.clone());
        assert!(blend_apply(&raster, &plan, &kernel, &bad, BlendOptions::with_workers(1)).is_err());
        let not_probs = |_: usize, _: &ImageTensor| ImageTensor::filled(Shape::new(2, 8, 8), 0.7);
        assert!(blend_probabilities_and_argmax(&raster, &plan, &kernel, &not_probs, BlendOptions::with_workers(1)).is_err());
    }
}
