//! Training objectives: bridge score matching in data-prediction form,
//! consistency distillation against a frozen teacher, and consistency
//! training with the shared-noise target.

use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridge::{bridge_point, Coupling, DataPredictor};
use crate::data::DatasetSpec;
use crate::error::{Error, Result};
use crate::model::{Model, Trainable};
use crate::rng::{self, Domain};
use crate::schedule::ScheduleSpec;
use crate::solver::ei_ode_step;

/// Samples per parallel work unit; partial sums are reduced in chunk order.
const CHUNK: usize = 16;

/// Losses above this are treated as divergence.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

/// Training window `t ∈ (ε, T - γ]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub eps: f64,
    pub gamma: f64,
}

impl Window {
    pub fn for_spec(spec: &ScheduleSpec) -> Self {
        let (eps, gamma) = spec.default_window();
        Self { eps, gamma }
    }

    pub fn t_max(&self, spec: &ScheduleSpec) -> f64 {
        spec.horizon() - self.gamma
    }

    /// Uniform draw on `(ε, T - γ]`.
    pub fn draw_t<R: Rng + ?Sized>(&self, spec: &ScheduleSpec, rng: &mut R) -> f64 {
        let u = rng::uniform(rng);
        self.t_max(spec) - u * (self.t_max(spec) - self.eps)
    }
}

/// Maps a sampled time `t` to the target time `r < t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TrainingSchedule {
    ConstantGap {
        dt: f64,
    },
    Sigmoid {
        #[serde(default = "default_q")]
        q: f64,
        s: u64,
        #[serde(default = "default_k")]
        k: f64,
        b: f64,
        dt_max: f64,
        dt_min: f64,
    },
}

fn default_q() -> f64 {
    2.0
}
fn default_k() -> f64 {
    8.0
}

impl TrainingSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            TrainingSchedule::ConstantGap { dt } => dt > 0.0,
            TrainingSchedule::Sigmoid { q, s, dt_max, dt_min, b, k } => {
                q > 1.0 && s > 0 && dt_min > 0.0 && dt_max >= dt_min && b.is_finite() && k.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training schedule {self:?}")))
        }
    }

    /// `1 - 1/q^⌊iters/s⌋` for the sigmoid schedule.
    pub fn gap_factor(&self, iters: u64) -> Option<f64> {
        match *self {
            TrainingSchedule::ConstantGap { .. } => None,
            TrainingSchedule::Sigmoid { q, s, .. } => Some(1.0 - q.powf(-((iters / s) as f64))),
        }
    }

    /// Target time for `t` at optimizer iteration `iters`; always `ε ≤ r < t`
    /// when `t > ε`.
    pub fn r(&self, t: f64, iters: u64, eps: f64) -> f64 {
        let r = match *self {
            TrainingSchedule::ConstantGap { dt } => t - dt,
            TrainingSchedule::Sigmoid { k, b, dt_max, dt_min, .. } => {
                let factor = self.gap_factor(iters).unwrap();
                let raw = t * factor * (1.0 + k / (1.0 + (b * t).exp()));
                raw.clamp(t - dt_max, t - dt_min)
            }
        };
        let r = r.max(eps);
        assert!(r < t, "training schedule produced r = {r} >= t = {t}");
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossWeighting {
    Unit,
    /// `1/(t - r)`
    InverseGap,
}

impl LossWeighting {
    pub fn lambda(self, t: f64, r: f64) -> f64 {
        match self {
            LossWeighting::Unit => 1.0,
            LossWeighting::InverseGap => 1.0 / (t - r),
        }
    }
}

/// Weighting of the data-prediction score-matching loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DbsmWeighting {
    Unit,
    /// `b_t²/c_t²`: the plain score-matching weight rewritten for `x₀`.
    ScoreMatching,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Metric {
    SquaredL2,
    /// `√(‖·‖² + c²) - c`
    PseudoHuber { c: f64 },
}

impl Metric {
    /// `c = 0.03·√dim`.
    pub fn pseudo_huber_for_dim(dim: usize) -> Self {
        Metric::PseudoHuber { c: 0.03 * (dim as f64).sqrt() }
    }

    /// Distance and its gradient w.r.t. the first argument.
    pub fn value_and_grad(&self, a: &[f64], b: &[f64]) -> (f64, Vec<f64>) {
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let sq: f64 = diff.iter().map(|d| d * d).sum();
        match *self {
            Metric::SquaredL2 => (sq, diff.iter().map(|d| 2.0 * d).collect()),
            Metric::PseudoHuber { c } => {
                let root = (sq + c * c).sqrt();
                (root - c, diff.iter().map(|d| d / root).collect())
            }
        }
    }

    pub fn value(&self, a: &[f64], b: &[f64]) -> f64 {
        self.value_and_grad(a, b).0
    }
}

/// Per-sample randomness: the time and the Gaussian noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub t: f64,
    pub z: Vec<f64>,
}

/// Draws `(t, z)` for every sample of a batch, sequentially from `rng`.
pub fn draw_batch<R: Rng + ?Sized>(
    spec: &ScheduleSpec,
    window: &Window,
    n: usize,
    dim: usize,
    rng: &mut R,
) -> Vec<Draw> {
    (0..n)
        .map(|_| {
            let t = window.draw_t(spec, rng);
            Draw { t, z: rng::normal_vec(rng, dim) }
        })
        .collect()
}

/// Mean loss over a batch and its parameter gradient.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Runs `per_sample(i, grad)` over `0..n` in fixed chunks and reduces in order.
fn reduce_batch<F>(n: usize, n_params: usize, per_sample: F) -> Result<LossGrad>
where
    F: Fn(usize, &mut [f64]) -> Result<f64> + Sync,
{
    if n == 0 {
        return Err(Error::TooFewSamples { min: 1, got: 0 });
    }
    let parts: Vec<Result<(f64, Vec<f64>)>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut grad = vec![0.0; n_params];
            let mut loss = 0.0;
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                loss += per_sample(i, &mut grad)?;
            }
            Ok((loss, grad))
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; n_params];
    for part in parts {
        let (l, g) = part?;
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let inv = 1.0 / n as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok(LossGrad { loss: loss * inv, grad })
}

fn check_draws(batch: &[Coupling], draws: &[Draw]) -> Result<()> {
    if batch.len() != draws.len() {
        return Err(Error::DimensionMismatch { expected: batch.len(), got: draws.len() });
    }
    Ok(())
}

fn finite_or(loss: f64, detail: impl FnOnce() -> String) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFiniteLoss { step: 0, detail: detail() })
    }
}

/// `w(t)‖x_θ(x_t, t, y) - x‖²` with `x_t = a_t y + b_t x + c_t z`.
pub fn dbsm_loss_on(
    spec: &ScheduleSpec,
    model: &dyn Trainable,
    batch: &[Coupling],
    draws: &[Draw],
    weighting: DbsmWeighting,
) -> Result<LossGrad> {
    check_draws(batch, draws)?;
    reduce_batch(batch.len(), model.num_params(), |i, grad| {
        let (pair, d) = (&batch[i], &draws[i]);
        let k = spec.bridge_coeffs(d.t)?;
        let w = match weighting {
            DbsmWeighting::Unit => 1.0,
            DbsmWeighting::ScoreMatching => k.b * k.b / k.variance(),
        };
        let x_t = bridge_point(&k, &pair.x, &pair.y, &d.z);
        let mut loss = 0.0;
        model.eval_vjp(
            &x_t,
            d.t,
            &pair.y,
            &mut |out| {
                let (v, g) = Metric::SquaredL2.value_and_grad(out, &pair.x);
                loss = finite_or(w * v, || format!("score matching at t = {}", d.t))?;
                Ok(g.into_iter().map(|gi| w * gi).collect())
            },
            grad,
        )?;
        Ok(loss)
    })
}

pub fn dbsm_loss<R: Rng + ?Sized>(
    spec: &ScheduleSpec,
    model: &dyn Trainable,
    batch: &[Coupling],
    window: &Window,
    weighting: DbsmWeighting,
    rng: &mut R,
) -> Result<LossGrad> {
    let dim = batch.first().map_or(0, Coupling::dim);
    let draws = draw_batch(spec, window, batch.len(), dim, rng);
    dbsm_loss_on(spec, model, batch, &draws, weighting)
}

/// Shared settings of the two consistency objectives.
#[derive(Debug, Clone, Copy)]
pub struct ConsistencySettings {
    pub schedule: TrainingSchedule,
    pub weighting: LossWeighting,
    pub metric: Metric,
    pub window: Window,
    /// optimizer iteration, drives the sigmoid schedule
    pub iters: u64,
}

fn consistency_loss_on<F>(
    spec: &ScheduleSpec,
    online: &dyn Trainable,
    target: &dyn Trainable,
    settings: &ConsistencySettings,
    batch: &[Coupling],
    draws: &[Draw],
    target_point: F,
) -> Result<LossGrad>
where
    F: Fn(&Coupling, &Draw, &[f64], f64) -> Result<Vec<f64>> + Sync,
{
    check_draws(batch, draws)?;
    reduce_batch(batch.len(), online.num_params(), |i, grad| {
        let (pair, d) = (&batch[i], &draws[i]);
        let t = d.t;
        let r = settings.schedule.r(t, settings.iters, settings.window.eps);
        let lambda = settings.weighting.lambda(t, r);
        let x_t = bridge_point(&spec.bridge_coeffs(t)?, &pair.x, &pair.y, &d.z);
        let x_r = target_point(pair, d, &x_t, r)?;
        let h_target = target.eval(&x_r, r, &pair.y)?;
        let mut loss = 0.0;
        online.eval_vjp(
            &x_t,
            t,
            &pair.y,
            &mut |out| {
                let (v, g) = settings.metric.value_and_grad(out, &h_target);
                loss = finite_or(lambda * v, || format!("consistency loss at t = {t}, r = {r}"))?;
                Ok(g.into_iter().map(|gi| lambda * gi).collect())
            },
            grad,
        )?;
        Ok(loss)
    })
}

/// `λ d(h_θ(x_t, t, y), h_θ⁻(x̂_r, r, y))` where `x̂_r` is one
/// exponential-integrator step of the teacher's ODE.
pub fn cbd_loss_on(
    spec: &ScheduleSpec,
    online: &dyn Trainable,
    target: &dyn Trainable,
    teacher: &dyn DataPredictor,
    settings: &ConsistencySettings,
    batch: &[Coupling],
    draws: &[Draw],
) -> Result<LossGrad> {
    consistency_loss_on(spec, online, target, settings, batch, draws, |pair, d, x_t, r| {
        let pred = teacher.predict(x_t, d.t, &pair.y)?;
        ei_ode_step(spec, d.t, r, x_t, &pair.y, &pred)
    })
}

/// `λ d(h_θ(a_t y + b_t x + c_t z, t, y), h_θ⁻(a_r y + b_r x + c_r z, r, y))`
/// with the same `z` at both times.
pub fn cbt_loss_on(
    spec: &ScheduleSpec,
    online: &dyn Trainable,
    target: &dyn Trainable,
    settings: &ConsistencySettings,
    batch: &[Coupling],
    draws: &[Draw],
) -> Result<LossGrad> {
    consistency_loss_on(spec, online, target, settings, batch, draws, |pair, d, _x_t, r| {
        Ok(bridge_point(&spec.bridge_coeffs(r)?, &pair.x, &pair.y, &d.z))
    })
}

#[allow(clippy::too_many_arguments)]
pub fn cbd_loss<R: Rng + ?Sized>(
    spec: &ScheduleSpec,
    online: &dyn Trainable,
    target: &dyn Trainable,
    teacher: &dyn DataPredictor,
    settings: &ConsistencySettings,
    batch: &[Coupling],
    rng: &mut R,
) -> Result<LossGrad> {
    let dim = batch.first().map_or(0, Coupling::dim);
    let draws = draw_batch(spec, &settings.window, batch.len(), dim, rng);
    cbd_loss_on(spec, online, target, teacher, settings, batch, &draws)
}

pub fn cbt_loss<R: Rng + ?Sized>(
    spec: &ScheduleSpec,
    online: &dyn Trainable,
    target: &dyn Trainable,
    settings: &ConsistencySettings,
    batch: &[Coupling],
    rng: &mut R,
) -> Result<LossGrad> {
    let dim = batch.first().map_or(0, Coupling::dim);
    let draws = draw_batch(spec, &settings.window, batch.len(), dim, rng);
    cbt_loss_on(spec, online, target, settings, batch, &draws)
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    Dbsm,
    Cbd,
    Cbt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub objective: Objective,
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub schedule: TrainingSchedule,
    pub weighting: LossWeighting,
    pub metric: Metric,
    pub dbsm_weighting: DbsmWeighting,
    pub log_every: u64,
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr >= 0.0 && self.lr.is_finite()) || self.log_every == 0 {
            return Err(Error::Config("batch_size, lr and log_every must be positive".into()));
        }
        self.schedule.validate()
    }
}

#[derive(Debug, Clone, Serialize)]
struct LogRow {
    step: u64,
    objective: Objective,
    loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    gap_factor: Option<f64>,
    wallclock_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub steps: u64,
    pub last_loss: f64,
    /// `(step, loss)` at every logged step
    pub history: Vec<(u64, f64)>,
}

/// Optimizes `model` in place. Consistency objectives keep a target copy
/// `θ⁻` that is overwritten with `θ` after every update; distillation needs
/// a frozen `teacher`.
///
/// On divergence the update that produced the offending loss is not applied,
/// so `model` holds the last good parameters when the error is returned.
pub fn train_loop(
    model: &mut Model,
    teacher: Option<&dyn DataPredictor>,
    data: &DatasetSpec,
    settings: &TrainSettings,
    window: &Window,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainReport> {
    settings.validate()?;
    if settings.objective == Objective::Cbd && teacher.is_none() {
        return Err(Error::Config("distillation needs a teacher".into()));
    }
    let spec = model.spec.clone();
    let mut adam = Adam::new(model.num_params(), settings.lr);
    let mut target = model.clone();
    let start = Instant::now();
    let mut report = TrainReport { steps: 0, last_loss: f64::NAN, history: Vec::new() };
    for step in 0..settings.steps {
        let batch = data.batch(settings.seed, step, settings.batch_size);
        let mut rng = rng::stream(settings.seed, Domain::TrainStep, step);
        let cs = ConsistencySettings {
            schedule: settings.schedule,
            weighting: settings.weighting,
            metric: settings.metric,
            window: *window,
            iters: step,
        };
        let result = match settings.objective {
            Objective::Dbsm => dbsm_loss(&spec, model, &batch, window, settings.dbsm_weighting, &mut rng),
            Objective::Cbd => cbd_loss(&spec, model, &target, teacher.unwrap(), &cs, &batch, &mut rng),
            Objective::Cbt => cbt_loss(&spec, model, &target, &cs, &batch, &mut rng),
        };
        let lg = match result {
            Ok(lg) => lg,
            Err(Error::NonFiniteLoss { detail, .. }) => return Err(Error::NonFiniteLoss { step: step as usize, detail }),
            Err(e) => return Err(e),
        };
        if !lg.loss.is_finite() || lg.loss > DIVERGENCE_THRESHOLD || lg.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step: step as usize, loss: lg.loss });
        }
        adam.step(model.params_mut(), &lg.grad);
        target.params_mut().copy_from_slice(model.params());
        report.steps = step + 1;
        report.last_loss = lg.loss;
        if step % settings.log_every == 0 || step + 1 == settings.steps {
            report.history.push((step, lg.loss));
            if let Some(w) = log.as_mut() {
                let row = LogRow {
                    step,
                    objective: settings.objective,
                    loss: lg.loss,
                    gap_factor: settings.schedule.gap_factor(step),
                    wallclock_s: start.elapsed().as_secs_f64(),
                };
                writeln!(w, "{}", serde_json::to_string(&row)?)?;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_gap_clamps_at_eps() {
        let s = TrainingSchedule::ConstantGap { dt: 0.1 };
        assert!((s.r(0.5, 0, 1e-4) - 0.4).abs() < 1e-15);
        assert_eq!(s.r(0.05, 0, 1e-4), 1e-4);
    }

    #[test]
    fn sigmoid_starts_at_max_gap() {
        let s = TrainingSchedule::Sigmoid { q: 2.0, s: 100, k: 8.0, b: 5.0, dt_max: 0.2, dt_min: 0.01 };
        assert_eq!(s.gap_factor(99), Some(0.0));
        assert!((s.r(0.7, 10, 1e-4) - 0.5).abs() < 1e-15);
        assert_eq!(s.gap_factor(250), Some(0.75));
        // late in training the raw value exceeds t and is clamped to t - dt_min
        assert!((s.r(0.05, 10_000, 1e-4) - 0.04).abs() < 1e-15);
    }

    #[test]
    fn pseudo_huber_is_zero_on_the_diagonal() {
        let m = Metric::pseudo_huber_for_dim(2);
        let (v, g) = m.value_and_grad(&[1.0, 2.0], &[1.0, 2.0]);
        assert_eq!(v, 0.0);
        assert_eq!(g, vec![0.0, 0.0]);
        assert!(m.value(&[1.0, 2.0], &[0.0, 2.0]) > 0.0);
    }

    #[test]
    fn inverse_gap_weight() {
        assert_eq!(LossWeighting::InverseGap.lambda(0.5, 0.25), 4.0);
        assert_eq!(LossWeighting::Unit.lambda(0.5, 0.25), 1.0);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![1.0, -1.0];
        let mut a = Adam::new(2, 0.1);
        a.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-7 && (p[1] + 0.9).abs() < 1e-7);
    }
}
