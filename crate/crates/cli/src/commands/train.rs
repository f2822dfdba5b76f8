use std::path::{Path, PathBuf};

use fmsr_core::diffusion::ScheduleConfig;
use fmsr_core::nn::{AdamWConfig, FieldMode, FieldModel, LrSchedule, Topology};
use fmsr_core::resample::{box_downsample, lanczos_resample, LanczosKernel};
use fmsr_core::toy::{point_tensor, GaussianMixture2d, POINT_SHAPE};
use fmsr_core::training::{train_toy, Objective, TrainConfig, TrainingSample};
use fmsr_core::{normalize, DType, ImageTensor, NormalizationSpec, SeededRng, Shape};
use serde::{Deserialize, Serialize};

use crate::config::{options, RunCommand};
use crate::error::{at, required, CliError, CliResult};
use crate::output::load_chip;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Two-component 2-D Gaussian mixture.
    Gmm,
    /// Conditional 4x upsampling of small image crops.
    Sr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    Flow,
    Diffusion,
}

options! {
    TrainToyArgs => TrainToyConfig {
        #[arg(value_enum)]
        task: Task = Task::Gmm,
        #[arg(value_enum)]
        objective: ObjectiveKind = ObjectiveKind::Flow,
        seed: u64 = 0,
        /// Optimizer steps.
        steps: usize = 2000,
        batch_size: usize = 128,
        accumulation: usize = 1,
        lr_peak: f64 = 2e-3,
        warmup_epochs: f64 = 1.0,
        weight_decay: f64 = 0.0,
        dataset_size: usize = 8192,
        /// Mixture component offset (gmm task).
        mu: f64 = 1.0,
        /// Mixture component standard deviation (gmm task).
        sd: f64 = 0.2,
        /// MLP hidden widths, comma separated.
        #[arg(value_delimiter = ',')]
        hidden: Vec<usize> = vec![64, 64, 64],
        time_hidden: usize = 32,
        /// U-Net level widths, comma separated (sr task).
        #[arg(value_delimiter = ',')]
        widths: Vec<usize> = vec![8, 16, 32],
        /// High-resolution crop size (sr task).
        hr_size: usize = 16,
        scale: usize = 4,
        /// Bands of the synthetic crops when no input raster is given.
        channels: usize = 1,
        input_min: f64 = 0.0,
        input_max: f64 = 10_000.0,
        train_steps: usize = 1000,
        beta_start: f64 = 1e-4,
        beta_end: f64 = 0.02,
        /// Checkpoint weight precision (f32 or f64).
        precision: DType = DType::F32,
    }
    optional {
        /// Raster to crop training pairs from (sr task).
        input: PathBuf,
        out: PathBuf,
        loss_csv: PathBuf,
    }
}

impl TrainToyConfig {
    fn schedule(&self) -> ScheduleConfig {
        ScheduleConfig {
            train_steps: self.train_steps,
            beta_start: self.beta_start,
            beta_end: self.beta_end,
        }
    }

    fn gmm_dataset(&self) -> CliResult<Vec<TrainingSample>> {
        let mixture = GaussianMixture2d::symmetric(self.mu, self.sd);
        mixture.validate()?;
        let mut rng = SeededRng::new(self.seed).derive(0);
        mixture
            .sample(self.dataset_size, &mut rng)
            .into_iter()
            .map(|p| {
                Ok(TrainingSample {
                    x1: point_tensor(p)?,
                    condition: None,
                })
            })
            .collect()
    }

    /// Smooth random fields in [-1, 1]: a few random plane waves per band.
    fn synthetic_crop(&self, rng: &mut SeededRng) -> CliResult<ImageTensor> {
        let n = self.hr_size as f64;
        let waves: Vec<[f64; 4]> = (0..self.channels * 3)
            .map(|_| {
                [
                    rng.uniform() * 3.0,
                    rng.uniform() * 3.0,
                    rng.uniform() * std::f64::consts::TAU,
                    0.5 + 0.5 * rng.uniform(),
                ]
            })
            .collect();
        Ok(ImageTensor::from_fn(
            Shape::new(self.channels, self.hr_size, self.hr_size),
            |c, y, x| {
                waves[c * 3..c * 3 + 3]
                    .iter()
                    .map(|[fy, fx, phase, amp]| {
                        amp * (std::f64::consts::TAU * (fy * y as f64 + fx * x as f64) / n + phase).sin()
                    })
                    .sum::<f64>()
                    / 3.0
            },
        )?)
    }

    fn sr_dataset(&self) -> CliResult<Vec<TrainingSample>> {
        if self.hr_size % self.scale != 0 || self.hr_size % 4 != 0 {
            return Err(CliError::usage("--hr-size must be divisible by --scale and by 4"));
        }
        let source = match &self.input {
            Some(path) => {
                let chip = load_chip(path)?;
                let spec = NormalizationSpec::new(self.input_min, self.input_max)?;
                Some(normalize(&chip.tensor, &spec).map_err(at(path))?)
            }
            None => None,
        };
        let mut rng = SeededRng::new(self.seed).derive(0);
        (0..self.dataset_size)
            .map(|_| {
                let x1 = match &source {
                    Some(image) => {
                        if image.height() < self.hr_size || image.width() < self.hr_size {
                            return Err(CliError::usage("input raster is smaller than --hr-size"));
                        }
                        let y = rng.below(image.height() - self.hr_size + 1);
                        let x = rng.below(image.width() - self.hr_size + 1);
                        image.crop(y, x, self.hr_size, self.hr_size)?
                    }
                    None => self.synthetic_crop(&mut rng)?,
                };
                let low = box_downsample(&x1, self.scale)?;
                let condition = lanczos_resample(&low, self.hr_size, self.hr_size, LanczosKernel::default())?;
                Ok(TrainingSample {
                    x1,
                    condition: Some(condition),
                })
            })
            .collect()
    }

    fn topology(&self, dataset: &[TrainingSample]) -> CliResult<Topology> {
        Ok(match self.task {
            Task::Gmm => Topology::Mlp {
                data_shape: POINT_SHAPE,
                cond_len: 0,
                hidden: self.hidden.clone(),
                time_hidden: self.time_hidden,
            },
            Task::Sr => {
                let widths: [usize; 3] = self
                    .widths
                    .as_slice()
                    .try_into()
                    .map_err(|_| CliError::usage("--widths takes exactly three values"))?;
                let channels = dataset[0].x1.channels();
                Topology::UNet {
                    channels,
                    cond_channels: channels,
                    widths,
                    time_hidden: self.time_hidden,
                }
            }
        })
    }
}

impl RunCommand for TrainToyConfig {
    fn primary_output(&self) -> Option<&Path> {
        self.out.as_deref()
    }

    fn run(&self) -> CliResult<()> {
        let out = required(&self.out, "out")?;
        if self.dataset_size == 0 || self.steps == 0 {
            return Err(CliError::usage("--dataset-size and --steps must be positive"));
        }
        let dataset = match self.task {
            Task::Gmm => self.gmm_dataset()?,
            Task::Sr => self.sr_dataset()?,
        };
        let (objective, mode) = match self.objective {
            ObjectiveKind::Flow => (Objective::FlowMatching, FieldMode::Velocity),
            ObjectiveKind::Diffusion => (
                Objective::Diffusion {
                    schedule: self.schedule(),
                },
                FieldMode::Noise,
            ),
        };
        let mut model = FieldModel::new(self.topology(&dataset)?, mode, self.seed)?;

        let effective = self.batch_size * self.accumulation;
        let steps_per_epoch = self.dataset_size / effective.max(1);
        if steps_per_epoch == 0 {
            return Err(CliError::usage(format!(
                "dataset of {} is smaller than one effective batch of {effective}",
                self.dataset_size
            )));
        }
        let epochs = self.steps.div_ceil(steps_per_epoch);
        let config = TrainConfig {
            batch_size: self.batch_size,
            accumulation: self.accumulation,
            epochs,
            max_steps: Some(self.steps),
            lr: LrSchedule {
                warmup_epochs: self.warmup_epochs,
                total_epochs: epochs as f64,
                lr_start: 0.1 * self.lr_peak,
                lr_peak: self.lr_peak,
            },
            optimizer: AdamWConfig {
                weight_decay: self.weight_decay,
                ..AdamWConfig::default()
            },
            seed: self.seed,
        };
        log::info!(
            "training {} parameters for {} steps ({epochs} epochs)",
            model.param_count(),
            self.steps
        );
        let records = train_toy(&mut model, &dataset, &objective, &config)?;
        if let Some(last) = records.last() {
            log::info!("final loss {:.5}", last.loss);
        }
        if self.precision == DType::F32 {
            model.round_to_f32();
        }
        model.save(out, self.precision).map_err(at(out))?;
        if let Some(path) = &self.loss_csv {
            let mut w = csv::Writer::from_path(path)?;
            for r in &records {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        Ok(())
    }
}
