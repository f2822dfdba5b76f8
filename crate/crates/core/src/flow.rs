//! Flow-matching paths, the L1 velocity objective and fixed-step ODE
//! samplers.
//!
//! Samples are produced by integrating `dx/dt = f(x, t, condition)` from
//! Gaussian noise at `t = 0` to data at `t = 1`. Time is tracked as the
//! integer step `k` over `T` and only converted to a real when the field is
//! evaluated, so the final state is always reached at exactly `t = 1`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{l1_loss, Field, FieldMode};
use crate::rng::{gaussian_noise_like, SeededRng};
use crate::tensor::ImageTensor;

/// One draw from the linear noise→data path.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPathSample {
    pub x0: ImageTensor,
    pub x1: ImageTensor,
    pub t: f64,
    pub x_t: ImageTensor,
    pub target_velocity: ImageTensor,
}

/// `(1 − t)·x0 + t·x1`.
pub fn interpolate(x0: &ImageTensor, x1: &ImageTensor, t: f64) -> Result<ImageTensor> {
    x0.zip_map(x1, |a, b| (1.0 - t) * a + t * b)
}

impl FlowPathSample {
    pub fn from_parts(x0: ImageTensor, x1: ImageTensor, t: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::invalid(format!("path time {t} outside [0, 1]")));
        }
        let x_t = interpolate(&x0, &x1, t)?;
        let target_velocity = x1.sub(&x0)?;
        Ok(Self {
            x0,
            x1,
            t,
            x_t,
            target_velocity,
        })
    }
}

/// Draws `x0 ~ N(0, I)` and, unless given, `t ~ U[0, 1)`.
pub fn make_path_sample(
    x1: &ImageTensor,
    rng: &mut SeededRng,
    t: Option<f64>,
) -> Result<FlowPathSample> {
    x1.ensure_finite("flow path data sample")?;
    let x0 = gaussian_noise_like(x1.shape(), rng)?;
    let t = match t {
        Some(t) => t,
        None => rng.uniform(),
    };
    FlowPathSample::from_parts(x0, x1.clone(), t)
}

fn require_mode(field: &dyn Field, expected: FieldMode) -> Result<()> {
    if field.mode() != expected {
        return Err(Error::ModeMismatch {
            expected,
            actual: field.mode(),
        });
    }
    Ok(())
}

/// Mean over `paths` of the mean absolute deviation between the predicted
/// and target velocities.
pub fn path_loss(
    field: &dyn Field,
    paths: &[FlowPathSample],
    conditions: &[Option<ImageTensor>],
) -> Result<f64> {
    require_mode(field, FieldMode::Velocity)?;
    if paths.is_empty() || paths.len() != conditions.len() {
        return Err(Error::invalid(format!(
            "need one condition per path ({} paths, {} conditions)",
            paths.len(),
            conditions.len()
        )));
    }
    let mut total = 0.0;
    for (path, cond) in paths.iter().zip(conditions) {
        let pred = field.evaluate(&path.x_t, path.t, cond.as_ref())?;
        total += l1_loss(&pred, &path.target_velocity)?.0;
    }
    Ok(total / paths.len() as f64)
}

/// Flow-matching objective on a batch: fresh noise and times are drawn
/// from `rng` for every element.
pub fn flow_matching_loss(
    field: &dyn Field,
    batch: &[ImageTensor],
    conditions: &[Option<ImageTensor>],
    rng: &mut SeededRng,
) -> Result<f64> {
    require_mode(field, FieldMode::Velocity)?;
    let paths = batch
        .iter()
        .map(|x1| make_path_sample(x1, rng, None))
        .collect::<Result<Vec<_>>>()?;
    path_loss(field, &paths, conditions)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMethod {
    Euler,
    Midpoint,
    Heun,
    Rk4,
}

impl SolverMethod {
    pub const ALL: [SolverMethod; 4] = [
        SolverMethod::Euler,
        SolverMethod::Midpoint,
        SolverMethod::Heun,
        SolverMethod::Rk4,
    ];

    pub fn evals_per_step(self) -> usize {
        match self {
            SolverMethod::Euler => 1,
            SolverMethod::Midpoint | SolverMethod::Heun => 2,
            SolverMethod::Rk4 => 4,
        }
    }

    /// Global order of accuracy.
    pub fn order(self) -> usize {
        match self {
            SolverMethod::Euler => 1,
            SolverMethod::Midpoint | SolverMethod::Heun => 2,
            SolverMethod::Rk4 => 4,
        }
    }
}

impl fmt::Display for SolverMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverMethod::Euler => "euler",
            SolverMethod::Midpoint => "midpoint",
            SolverMethod::Heun => "heun",
            SolverMethod::Rk4 => "rk4",
        })
    }
}

impl FromStr for SolverMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euler" => Ok(SolverMethod::Euler),
            "midpoint" => Ok(SolverMethod::Midpoint),
            "heun" => Ok(SolverMethod::Heun),
            "rk4" => Ok(SolverMethod::Rk4),
            other => Err(Error::invalid(format!("unknown ODE method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolverSpec {
    pub method: SolverMethod,
    pub steps: usize,
}

impl SolverSpec {
    pub fn new(method: SolverMethod, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("solver needs at least one step"));
        }
        Ok(Self { method, steps })
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.steps as f64
    }
}

pub fn count_function_evals(spec: &SolverSpec) -> usize {
    spec.method.evals_per_step() * spec.steps
}

/// Integrates the field from `t = 0` (state `x0`) to `t = 1`.
///
/// Heun and RK4 evaluate the field at `t = 1`, a time never drawn during
/// training (`t ∈ [0, 1)`). Trained models can behave poorly there at very
/// small step counts; oracle fields are unaffected.
pub fn solve_flow(
    field: &dyn Field,
    x0: &ImageTensor,
    condition: Option<&ImageTensor>,
    spec: &SolverSpec,
) -> Result<ImageTensor> {
    require_mode(field, FieldMode::Velocity)?;
    if spec.steps == 0 {
        return Err(Error::invalid("solver needs at least one step"));
    }
    x0.ensure_finite("initial flow state")?;
    let steps = spec.steps;
    let dt = spec.dt();
    let time = |num: usize, den: usize| num as f64 / den as f64;
    let eval = |x: &ImageTensor, t: f64| -> Result<ImageTensor> {
        let v = field.evaluate(x, t, condition)?;
        v.require_shape(x.shape(), "field output")?;
        Ok(v)
    };

    let mut x = x0.clone();
    for k in 0..steps {
        let t = time(k, steps);
        let t_half = time(2 * k + 1, 2 * steps);
        let t_next = time(k + 1, steps);
        x = match spec.method {
            SolverMethod::Euler => {
                let k1 = eval(&x, t)?;
                x.add_scaled(&k1, dt)?
            }
            SolverMethod::Midpoint => {
                let k1 = eval(&x, t)?;
                let mid = x.add_scaled(&k1, 0.5 * dt)?;
                let k2 = eval(&mid, t_half)?;
                x.add_scaled(&k2, dt)?
            }
            SolverMethod::Heun => {
                let k1 = eval(&x, t)?;
                let predictor = x.add_scaled(&k1, dt)?;
                let k2 = eval(&predictor, t_next)?;
                let avg = k1.zip_map(&k2, |a, b| 0.5 * (a + b))?;
                x.add_scaled(&avg, dt)?
            }
            SolverMethod::Rk4 => {
                let k1 = eval(&x, t)?;
                let k2 = eval(&x.add_scaled(&k1, 0.5 * dt)?, t_half)?;
                let k3 = eval(&x.add_scaled(&k2, 0.5 * dt)?, t_half)?;
                let k4 = eval(&x.add_scaled(&k3, dt)?, t_next)?;
                let mut slope = k1.add_scaled(&k2, 2.0)?;
                slope = slope.add_scaled(&k3, 2.0)?;
                slope = slope.add_scaled(&k4, 1.0)?;
                x.add_scaled(&slope, dt / 6.0)?
            }
        };
        x.ensure_finite(&format!("flow solver state after step {}", k + 1))?;
    }
    Ok(x)
}
