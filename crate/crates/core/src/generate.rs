//! One entry point over the flow solvers and the diffusion samplers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffusion::{self, NoiseSchedule, Sampler, ScheduleConfig, StridedPlan};
use crate::error::{Error, Result};
use crate::flow::{solve_flow, SolverMethod, SolverSpec};
use crate::nn::{Field, FieldMode};
use crate::rng::{gaussian_noise_like, SeededRng};
use crate::tensor::{ImageTensor, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Euler,
    Midpoint,
    Heun,
    Rk4,
    Ddpm,
    Ddim,
}

impl Method {
    pub fn field_mode(self) -> FieldMode {
        match self {
            Method::Ddpm | Method::Ddim => FieldMode::Noise,
            _ => FieldMode::Velocity,
        }
    }

    fn solver(self) -> Option<SolverMethod> {
        match self {
            Method::Euler => Some(SolverMethod::Euler),
            Method::Midpoint => Some(SolverMethod::Midpoint),
            Method::Heun => Some(SolverMethod::Heun),
            Method::Rk4 => Some(SolverMethod::Rk4),
            Method::Ddpm | Method::Ddim => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.solver(), self) {
            (Some(s), _) => s.fmt(f),
            (None, Method::Ddpm) => f.write_str("ddpm"),
            (None, _) => f.write_str("ddim"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ddpm" => Ok(Method::Ddpm),
            "ddim" => Ok(Method::Ddim),
            other => Ok(match other.parse::<SolverMethod>()? {
                SolverMethod::Euler => Method::Euler,
                SolverMethod::Midpoint => Method::Midpoint,
                SolverMethod::Heun => Method::Heun,
                SolverMethod::Rk4 => Method::Rk4,
            }),
        }
    }
}

/// Sampling method, step count and (for diffusion) the training schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationSpec {
    pub method: Method,
    pub steps: usize,
    pub schedule: ScheduleConfig,
}

impl GenerationSpec {
    /// Draws the starting noise from `rng` and integrates or denoises it.
    pub fn generate(
        &self,
        field: &dyn Field,
        shape: Shape,
        condition: Option<&ImageTensor>,
        rng: &mut SeededRng,
    ) -> Result<ImageTensor> {
        if field.mode() != self.method.field_mode() {
            return Err(Error::ModeMismatch {
                expected: self.method.field_mode(),
                actual: field.mode(),
            });
        }
        match self.method.solver() {
            Some(method) => {
                let x0 = gaussian_noise_like(shape, rng)?;
                solve_flow(field, &x0, condition, &SolverSpec::new(method, self.steps)?)
            }
            None => {
                let schedule = NoiseSchedule::from_config(&self.schedule)?;
                let plan = StridedPlan::new(schedule.train_steps(), self.steps)?;
                let sampler = if self.method == Method::Ddpm { Sampler::Ddpm } else { Sampler::Ddim };
                diffusion::sample(field, shape, condition, &schedule, &plan, sampler, rng)
            }
        }
    }
}
