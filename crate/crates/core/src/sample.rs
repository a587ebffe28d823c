//! Few-step sampling with a consistency function, multi-step ODE baselines,
//! and noise tapes for exact replay and interpolation.
//!
//! The consistency sampler evaluates `h_θ` once at the terminal time (on the
//! pinned point `x_T = y`), then alternates a posterior re-noising step
//! `x_{t_i} ~ q_{t_i|0T}(· | x̂₀, y)` with another consistency evaluation.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridge::{check_dim, DataPredictor};
use crate::error::{Error, Result};
use crate::model::Trainable;
use crate::rng::{self, Domain};
use crate::schedule::ScheduleSpec;
use crate::solver::{integrate_ode, posterior_sde_step, OdeSolver};
use crate::train::Window;

/// How consistency evaluation times are placed after the terminal one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PlanMode {
    /// second time `T - γ`, the rest uniform towards `ε`
    Uniform,
    /// second time `t2`, the rest uniform towards `ε`
    PinnedSecond { t2: f64 },
}

/// Decreasing consistency evaluation times; the first is always `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimestepPlan {
    pub timesteps: Vec<f64>,
    pub mode: PlanMode,
}

impl TimestepPlan {
    /// Plan with `nfe` evaluations. After `T` and the second time `t₂`, the
    /// remaining times are `t₂ - (t₂ - ε)·k/(nfe - 1)` for `k = 1..nfe-2`,
    /// so `ε` itself, where `h` is the identity, is never evaluated.
    pub fn new(spec: &ScheduleSpec, window: &Window, nfe: usize, mode: PlanMode) -> Result<Self> {
        if nfe < 2 {
            return Err(Error::InvalidPlan(format!("need at least two evaluations, got {nfe}")));
        }
        let horizon = spec.horizon();
        let t2 = match mode {
            PlanMode::Uniform => horizon - window.gamma,
            PlanMode::PinnedSecond { t2 } => t2,
        };
        if !(t2 > window.eps && t2 <= horizon - window.gamma) {
            return Err(Error::InvalidPlan(format!(
                "second time {t2} must lie in (ε, T - γ] = ({}, {}]",
                window.eps,
                horizon - window.gamma
            )));
        }
        let mut timesteps = vec![horizon, t2];
        let span = t2 - window.eps;
        timesteps.extend((1..nfe - 1).map(|k| t2 - span * k as f64 / (nfe - 1) as f64));
        Ok(Self { timesteps, mode })
    }

    pub fn nfe(&self) -> usize {
        self.timesteps.len()
    }

    pub fn validate(&self, spec: &ScheduleSpec, window: &Window) -> Result<()> {
        let ts = &self.timesteps;
        if ts.len() < 2 {
            return Err(Error::InvalidPlan(format!("need at least two evaluations, got {}", ts.len())));
        }
        if ts[0] != spec.horizon() {
            return Err(Error::InvalidPlan(format!("first time must be T = {}", spec.horizon())));
        }
        if ts.windows(2).any(|w| w[1] >= w[0]) || ts[1..].iter().any(|t| *t < window.eps) {
            return Err(Error::InvalidPlan("times must decrease strictly and stay ≥ ε".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TapeRecord {
    pub t: f64,
    pub z: Vec<f64>,
}

/// Everything needed to regenerate one consistency sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryTape {
    pub seed: u64,
    pub index: u64,
    pub plan: TimestepPlan,
    pub y: Vec<f64>,
    pub records: Vec<TapeRecord>,
}

fn initial_time(spec: &ScheduleSpec, window: &Window, t: f64) -> f64 {
    t.min(spec.horizon() - window.gamma)
}

/// Consistency sampling with explicit noises, one per plan time after `T`.
pub fn run_plan(
    model: &dyn Trainable,
    spec: &ScheduleSpec,
    window: &Window,
    y: &[f64],
    plan: &TimestepPlan,
    noises: &[Vec<f64>],
) -> Result<Vec<f64>> {
    plan.validate(spec, window)?;
    if noises.len() + 1 != plan.nfe() {
        return Err(Error::InvalidPlan(format!(
            "plan has {} evaluations but {} noises were supplied",
            plan.nfe(),
            noises.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState { step: 0 });
    }
    let ts = &plan.timesteps;
    let mut x0_hat = model.eval(y, initial_time(spec, window, ts[0]), y)?;
    for (i, z) in noises.iter().enumerate() {
        check_dim(y.len(), z.len())?;
        let x_t = posterior_sde_step(spec, ts[i], ts[i + 1], &x0_hat, y, z)?;
        x0_hat = model.eval(&x_t, ts[i + 1], y)?;
        if x0_hat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step: i + 1 });
        }
    }
    Ok(x0_hat)
}

/// Draws the noises from `rng`, samples, and records the tape.
pub fn cdbm_sample<R: Rng + ?Sized>(
    model: &dyn Trainable,
    spec: &ScheduleSpec,
    window: &Window,
    y: &[f64],
    plan: &TimestepPlan,
    rng: &mut R,
) -> Result<(Vec<f64>, TrajectoryTape)> {
    let records: Vec<TapeRecord> = plan.timesteps[1..]
        .iter()
        .map(|&t| TapeRecord { t, z: rng::normal_vec(rng, y.len()) })
        .collect();
    let tape = TrajectoryTape { seed: 0, index: 0, plan: plan.clone(), y: y.to_vec(), records };
    let x = replay(model, spec, window, &tape)?;
    Ok((x, tape))
}

pub fn replay(model: &dyn Trainable, spec: &ScheduleSpec, window: &Window, tape: &TrajectoryTape) -> Result<Vec<f64>> {
    if tape.records.iter().zip(&tape.plan.timesteps[1..]).any(|(r, t)| r.t != *t) {
        return Err(Error::TapeMismatch("record times disagree with the plan".into()));
    }
    let noises: Vec<Vec<f64>> = tape.records.iter().map(|r| r.z.clone()).collect();
    run_plan(model, spec, window, &tape.y, &tape.plan, &noises)
}

/// One sample per `y`; sample `i` draws from stream `(seed, Sampling, i)`.
pub fn cdbm_sample_many(
    model: &dyn Trainable,
    spec: &ScheduleSpec,
    window: &Window,
    ys: &[Vec<f64>],
    plan: &TimestepPlan,
    seed: u64,
) -> Result<Vec<(Vec<f64>, TrajectoryTape)>> {
    ys.par_iter()
        .enumerate()
        .map(|(i, y)| {
            let mut rng = rng::stream(seed, Domain::Sampling, i as u64);
            let (x, mut tape) = cdbm_sample(model, spec, window, y, plan, &mut rng)?;
            tape.seed = seed;
            tape.index = i as u64;
            Ok((x, tape))
        })
        .collect()
}

/// Bridge ODE sampler: one posterior step from `T` to `T - γ` around the
/// predictor's estimate at the pinned point, then `n_steps` uniform solver
/// steps down to `ε`. Uses `n_steps + 1` predictor evaluations.
pub fn ode_sample(
    predictor: &dyn DataPredictor,
    spec: &ScheduleSpec,
    window: &Window,
    y: &[f64],
    n_steps: usize,
    solver: OdeSolver,
    z_init: &[f64],
) -> Result<Vec<f64>> {
    let horizon = spec.horizon();
    let t_start = horizon - window.gamma;
    let x0_hat = predictor.predict(y, t_start, y)?;
    let x_start = posterior_sde_step(spec, horizon, t_start, &x0_hat, y, z_init)?;
    integrate_ode(spec, solver, predictor, &x_start, y, t_start, window.eps, n_steps)
}

pub fn ode_sample_many(
    predictor: &dyn DataPredictor,
    spec: &ScheduleSpec,
    window: &Window,
    ys: &[Vec<f64>],
    n_steps: usize,
    solver: OdeSolver,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    ys.par_iter()
        .enumerate()
        .map(|(i, y)| {
            let z = rng::normal_vec(&mut rng::stream(seed, Domain::Sampling, i as u64), y.len());
            ode_sample(predictor, spec, window, y, n_steps, solver, &z)
        })
        .collect()
}

/// Spherical interpolation; `w = 0` and `w = 1` return the endpoints exactly
/// and nearly parallel inputs fall back to linear interpolation.
pub fn slerp(a: &[f64], b: &[f64], w: f64) -> Vec<f64> {
    if w == 0.0 {
        return a.to_vec();
    }
    if w == 1.0 {
        return b.to_vec();
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let cos = if na > 0.0 && nb > 0.0 {
        (a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)).clamp(-1.0, 1.0)
    } else {
        1.0
    };
    let omega = cos.acos();
    let sin = omega.sin();
    let (ca, cb) = if sin.abs() < 1e-12 {
        (1.0 - w, w)
    } else {
        (((1.0 - w) * omega).sin() / sin, (w * omega).sin() / sin)
    };
    a.iter().zip(b).map(|(x, y)| ca * x + cb * y).collect()
}

/// Samples along the slerp path between the noises of two tapes.
pub fn interpolate(
    model: &dyn Trainable,
    spec: &ScheduleSpec,
    window: &Window,
    tape_a: &TrajectoryTape,
    tape_b: &TrajectoryTape,
    weights: &[f64],
) -> Result<Vec<Vec<f64>>> {
    if tape_a.plan.timesteps != tape_b.plan.timesteps {
        return Err(Error::TapeMismatch("plans differ".into()));
    }
    if tape_a.y != tape_b.y {
        return Err(Error::TapeMismatch("conditioning inputs differ".into()));
    }
    if tape_a.records.len() != tape_b.records.len() {
        return Err(Error::TapeMismatch("record counts differ".into()));
    }
    weights
        .iter()
        .map(|&w| {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::Config(format!("interpolation weight {w} outside [0, 1]")));
            }
            let mut tape = tape_a.clone();
            for (r, rb) in tape.records.iter_mut().zip(&tape_b.records) {
                r.z = slerp(&r.z, &rb.z, w);
            }
            replay(model, spec, window, &tape)
        })
        .collect()
}
