//! Minibatch training for toy field models.
//!
//! Per-sample randomness (noise, time) comes from a stream derived from the
//! sample's global position in the epoch ordering, so splitting an effective
//! batch into accumulation micro-batches draws exactly the same values as
//! processing it in one piece.

use serde::{Deserialize, Serialize};

use crate::diffusion::{forward_marginal, NoiseSchedule, ScheduleConfig};
use crate::error::{Error, Result};
use crate::flow::make_path_sample;
use crate::nn::{l1_loss, AdamWConfig, FieldMode, FieldModel, LrSchedule, OptimizerState};
use crate::rng::SeededRng;
use crate::tensor::ImageTensor;

const NOISE_STREAM_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub x1: ImageTensor,
    pub condition: Option<ImageTensor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Objective {
    FlowMatching,
    Diffusion { schedule: ScheduleConfig },
}

impl Objective {
    fn mode(&self) -> FieldMode {
        match self {
            Objective::FlowMatching => FieldMode::Velocity,
            Objective::Diffusion { .. } => FieldMode::Noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Micro-batches accumulated per optimizer step.
    pub accumulation: usize,
    pub epochs: usize,
    /// Stops early after this many optimizer steps.
    pub max_steps: Option<usize>,
    pub lr: LrSchedule,
    pub optimizer: AdamWConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            accumulation: 2,
            epochs: 100,
            max_steps: None,
            lr: LrSchedule::default(),
            optimizer: AdamWConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: f64,
    pub lr: f64,
    pub loss: f64,
}

/// Loss and parameter gradient of one sample under `objective`.
fn sample_loss_grad(
    model: &FieldModel,
    sample: &TrainingSample,
    objective: &Objective,
    schedule: Option<&NoiseSchedule>,
    rng: &mut SeededRng,
) -> Result<(f64, Vec<f64>)> {
    let cond = sample.condition.as_ref();
    let (x_t, t, target) = match (objective, schedule) {
        (Objective::FlowMatching, _) => {
            let path = make_path_sample(&sample.x1, rng, None)?;
            (path.x_t, path.t, path.target_velocity)
        }
        (Objective::Diffusion { .. }, Some(schedule)) => {
            let step = 1 + rng.below(schedule.train_steps());
            let (x_t, eps) = forward_marginal(&sample.x1, step, schedule, rng)?;
            (x_t, schedule.model_time(step), eps)
        }
        (Objective::Diffusion { .. }, None) => unreachable!("schedule built for diffusion"),
    };
    let (pred, trace) = model.forward_traced(&x_t, t, cond)?;
    let (loss, adjoint) = l1_loss(&pred, &target)?;
    let grads = model.backward(&trace, &adjoint)?;
    Ok((loss, grads))
}

/// Trains `model` in place and returns one loss record per optimizer step.
pub fn train_toy(
    model: &mut FieldModel,
    dataset: &[TrainingSample],
    objective: &Objective,
    config: &TrainConfig,
) -> Result<Vec<LossRecord>> {
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    if model.mode() != objective.mode() {
        return Err(Error::ModeMismatch {
            expected: objective.mode(),
            actual: model.mode(),
        });
    }
    if config.batch_size == 0 || config.accumulation == 0 {
        return Err(Error::invalid("batch size and accumulation must be positive"));
    }
    config.lr.validate()?;
    if config.epochs as f64 > config.lr.total_epochs {
        return Err(Error::invalid(format!(
            "training for {} epochs but the learning-rate schedule ends at {}",
            config.epochs, config.lr.total_epochs
        )));
    }
    let effective = config.batch_size * config.accumulation;
    let steps_per_epoch = dataset.len() / effective;
    if steps_per_epoch == 0 && config.epochs > 0 {
        return Err(Error::invalid(format!(
            "dataset of {} samples is smaller than one effective batch ({effective})",
            dataset.len()
        )));
    }
    let schedule = match objective {
        Objective::Diffusion { schedule } => Some(NoiseSchedule::from_config(schedule)?),
        Objective::FlowMatching => None,
    };

    let root = SeededRng::new(config.seed);
    let noise_root = SeededRng::new(config.seed ^ NOISE_STREAM_SALT);
    let mut optimizer = OptimizerState::new(model.param_count(), config.optimizer)?;
    let mut records = Vec::new();
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    'epochs: for epoch in 0..config.epochs {
        order.sort_unstable();
        root.derive(epoch as u64).shuffle(&mut order);

        for step_in_epoch in 0..steps_per_epoch {
            if config.max_steps.is_some_and(|m| records.len() >= m) {
                break 'epochs;
            }
            let epoch_pos = epoch as f64 + step_in_epoch as f64 / steps_per_epoch as f64;
            let lr = config.lr.lr_at(epoch_pos)?;

            let mut grads = vec![0.0; model.param_count()];
            let mut loss = 0.0;
            for micro in 0..config.accumulation {
                let mut micro_grads = vec![0.0; model.param_count()];
                let mut micro_loss = 0.0;
                for b in 0..config.batch_size {
                    let pos = step_in_epoch * effective + micro * config.batch_size + b;
                    let global = (epoch * dataset.len() + pos) as u64;
                    let mut rng = noise_root.derive(global);
                    let sample = &dataset[order[pos]];
                    let (l, g) = sample_loss_grad(model, sample, objective, schedule.as_ref(), &mut rng)?;
                    micro_loss += l;
                    micro_grads.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
                let inv = 1.0 / config.batch_size as f64;
                loss += micro_loss * inv;
                grads
                    .iter_mut()
                    .zip(&micro_grads)
                    .for_each(|(a, b)| *a += b * inv);
            }
            let inv_acc = 1.0 / config.accumulation as f64;
            grads.iter_mut().for_each(|g| *g *= inv_acc);
            loss *= inv_acc;

            optimizer.step(model.params_mut(), &grads, lr)?;
            records.push(LossRecord {
                step: records.len(),
                epoch: epoch_pos,
                lr,
                loss,
            });
        }
    }
    Ok(records)
}
