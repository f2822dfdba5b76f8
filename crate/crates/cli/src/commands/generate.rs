use std::path::{Path, PathBuf};

use fmsr_core::classifier::PixelClassifier;
use fmsr_core::diffusion::ScheduleConfig;
use fmsr_core::generate::{GenerationSpec, Method};
use fmsr_core::nn::{FieldModel, Topology};
use fmsr_core::resample::{lanczos_resample, LanczosKernel};
use fmsr_core::tiling::{blend_apply, blend_probabilities_and_argmax, plan_windows, BlendKernel, BlendOptions};
use fmsr_core::{denormalize, normalize, DType, GeoChip, ImageTensor, NormalizationSpec, SeededRng, Shape};

use crate::config::{options, RunCommand};
use crate::error::{at, required, CliError, CliResult};
use crate::output::{load_chip, save_chip};

fn load_model(path: &Path) -> CliResult<FieldModel> {
    FieldModel::load(path).map_err(at(path))
}

fn schedule(train_steps: usize, beta_start: f64, beta_end: f64) -> ScheduleConfig {
    ScheduleConfig {
        train_steps,
        beta_start,
        beta_end,
    }
}

/// Shape the model generates for a condition of `height × width`.
fn output_shape(model: &FieldModel, height: usize, width: usize) -> Shape {
    match model.topology() {
        Topology::Mlp { data_shape, .. } => *data_shape,
        Topology::UNet { channels, .. } => Shape::new(*channels, height, width),
    }
}

fn resolve_workers(workers: usize) -> usize {
    if workers > 0 {
        workers
    } else {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    }
}

options! {
    SampleArgs => SampleConfig {
        #[arg(alias = "sampler")]
        method: Method = Method::Euler,
        steps: usize = 8,
        seed: u64 = 0,
        /// Number of independent samples.
        count: usize = 1,
        train_steps: usize = 1000,
        beta_start: f64 = 1e-4,
        beta_end: f64 = 0.02,
        /// Raster output dtype.
        dtype: DType = DType::F64,
    }
    optional {
        checkpoint: PathBuf,
        /// Conditioning raster, already in model space.
        condition: PathBuf,
        /// `.csv` writes one row per sample; anything else a raster with samples stacked as bands.
        out: PathBuf,
    }
}

impl RunCommand for SampleConfig {
    fn primary_output(&self) -> Option<&Path> {
        self.out.as_deref()
    }

    fn run(&self) -> CliResult<()> {
        let checkpoint = required(&self.checkpoint, "checkpoint")?;
        let out = required(&self.out, "out")?;
        if self.count == 0 {
            return Err(CliError::usage("--count must be positive"));
        }
        let model = load_model(checkpoint)?;
        let condition = self.condition.as_deref().map(load_chip).transpose()?;
        let cond = condition.as_ref().map(|c| &c.tensor);
        let shape = match (model.topology(), cond) {
            (Topology::UNet { .. }, None) => {
                return Err(CliError::usage("an encoder–decoder checkpoint needs --condition"))
            }
            (_, Some(c)) => output_shape(&model, c.height(), c.width()),
            (_, None) => output_shape(&model, 1, 1),
        };
        let spec = GenerationSpec {
            method: self.method,
            steps: self.steps,
            schedule: schedule(self.train_steps, self.beta_start, self.beta_end),
        };
        let root = SeededRng::new(self.seed);
        let samples = (0..self.count)
            .map(|i| spec.generate(&model, shape, cond, &mut root.derive(i as u64)))
            .collect::<Result<Vec<_>, _>>()?;

        if out.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            let mut w = csv::Writer::from_path(out)?;
            let mut header = vec!["sample".to_string()];
            header.extend((0..shape.len()).map(|i| format!("v{i}")));
            w.write_record(&header)?;
            for (i, s) in samples.iter().enumerate() {
                let mut row = vec![i.to_string()];
                row.extend(s.data().iter().map(f64::to_string));
                w.write_record(&row)?;
            }
            w.flush()?;
        } else {
            let mut stacked = samples[0].clone();
            for s in &samples[1..] {
                stacked = stacked.concat_channels(s)?;
            }
            let chip = match &condition {
                Some(c) => GeoChip::new(stacked, c.pixel_size_m, c.origin_xy, None)?,
                None => GeoChip::plain(stacked),
            };
            save_chip(&chip, out, self.dtype)?;
        }
        Ok(())
    }
}

/// Per-window super-resolution: normalize, Lanczos-upsample as the
/// condition, generate with a window-indexed noise stream, map back.
struct WindowSr<'a> {
    model: &'a FieldModel,
    spec: GenerationSpec,
    norm: NormalizationSpec,
    scale: usize,
    seed: u64,
}

impl WindowSr<'_> {
    fn normalized(&self, index: usize, chip: &ImageTensor) -> fmsr_core::Result<ImageTensor> {
        let (h, w) = (chip.height() * self.scale, chip.width() * self.scale);
        let cond = lanczos_resample(&normalize(chip, &self.norm)?, h, w, LanczosKernel::default())?;
        let mut rng = SeededRng::new(self.seed).derive(index as u64);
        self.spec
            .generate(self.model, output_shape(self.model, h, w), Some(&cond), &mut rng)
    }
}

fn plan_and_kernel(
    raster: &ImageTensor,
    window: usize,
    stride: usize,
    scale: usize,
) -> CliResult<(fmsr_core::tiling::WindowPlan, BlendKernel)> {
    let plan = plan_windows(raster.height(), raster.width(), window, stride, scale)?;
    let kernel = BlendKernel::for_plan(&plan)?;
    Ok((plan, kernel))
}

options! {
    SrTileArgs => SrTileConfig {
        #[arg(alias = "sampler")]
        method: Method = Method::Euler,
        steps: usize = 8,
        /// Low-resolution window size in pixels.
        window: usize = 64,
        stride: usize = 32,
        scale: usize = 4,
        /// Threads for window inference; 0 uses every available core.
        workers: usize = 0,
        seed: u64 = 0,
        input_min: f64 = 0.0,
        input_max: f64 = 10_000.0,
        train_steps: usize = 1000,
        beta_start: f64 = 1e-4,
        beta_end: f64 = 0.02,
        dtype: DType = DType::F32,
    }
    optional {
        input: PathBuf,
        checkpoint: PathBuf,
        out: PathBuf,
    }
}

impl RunCommand for SrTileConfig {
    fn primary_output(&self) -> Option<&Path> {
        self.out.as_deref()
    }

    fn run(&self) -> CliResult<()> {
        let input = required(&self.input, "input")?;
        let out = required(&self.out, "out")?;
        let model = load_model(required(&self.checkpoint, "checkpoint")?)?;
        let chip = load_chip(input)?;
        let norm = NormalizationSpec::new(self.input_min, self.input_max)?;
        let (plan, kernel) = plan_and_kernel(&chip.tensor, self.window, self.stride, self.scale)?;
        let sr = WindowSr {
            model: &model,
            spec: GenerationSpec {
                method: self.method,
                steps: self.steps,
                schedule: schedule(self.train_steps, self.beta_start, self.beta_end),
            },
            norm,
            scale: self.scale,
            seed: self.seed,
        };
        let transform = |index: usize, window: &ImageTensor| denormalize(&sr.normalized(index, window)?, &norm);
        let options = BlendOptions::with_workers(resolve_workers(self.workers));
        log::info!("{} windows on {} workers", plan.len(), options.workers);
        let result = blend_apply(&chip.tensor, &plan, &kernel, &transform, options)?;
        let out_chip = GeoChip::new(result, chip.pixel_size_m / self.scale as f64, chip.origin_xy, None)?;
        save_chip(&out_chip, out, self.dtype)
    }
}

options! {
    LcMapArgs => LcMapConfig {
        #[arg(alias = "sampler")]
        method: Method = Method::Euler,
        steps: usize = 8,
        window: usize = 64,
        stride: usize = 32,
        /// Upsampling factor; without --checkpoint windows are Lanczos-upsampled.
        scale: usize = 4,
        workers: usize = 0,
        seed: u64 = 0,
        input_min: f64 = 0.0,
        input_max: f64 = 10_000.0,
        train_steps: usize = 1000,
        beta_start: f64 = 1e-4,
        beta_end: f64 = 0.02,
    }
    optional {
        input: PathBuf,
        /// Super-resolution checkpoint.
        checkpoint: PathBuf,
        /// Per-pixel classifier JSON, applied to normalized bands.
        classifier: PathBuf,
        out: PathBuf,
    }
}

impl RunCommand for LcMapConfig {
    fn primary_output(&self) -> Option<&Path> {
        self.out.as_deref()
    }

    fn run(&self) -> CliResult<()> {
        let input = required(&self.input, "input")?;
        let out = required(&self.out, "out")?;
        let classifier_path = required(&self.classifier, "classifier")?;
        let classifier = PixelClassifier::load(classifier_path).map_err(at(classifier_path))?;
        let model = self.checkpoint.as_deref().map(load_model).transpose()?;
        let chip = load_chip(input)?;
        let norm = NormalizationSpec::new(self.input_min, self.input_max)?;
        let (plan, kernel) = plan_and_kernel(&chip.tensor, self.window, self.stride, self.scale)?;
        let spec = GenerationSpec {
            method: self.method,
            steps: self.steps,
            schedule: schedule(self.train_steps, self.beta_start, self.beta_end),
        };
        let scale = self.scale;
        let transform = |index: usize, window: &ImageTensor| {
            let upsampled = match &model {
                Some(model) => WindowSr {
                    model,
                    spec,
                    norm,
                    scale,
                    seed: self.seed,
                }
                .normalized(index, window)?,
                None => lanczos_resample(
                    &normalize(window, &norm)?,
                    window.height() * scale,
                    window.width() * scale,
                    LanczosKernel::default(),
                )?,
            };
            classifier.probabilities(&upsampled)
        };
        let options = BlendOptions::with_workers(resolve_workers(self.workers));
        let labels = blend_probabilities_and_argmax(&chip.tensor, &plan, &kernel, &transform, options)?;
        let out_chip = labels.to_chip(chip.pixel_size_m / scale as f64, chip.origin_xy)?;
        save_chip(&out_chip, out, labels.storage_dtype())
    }
}
