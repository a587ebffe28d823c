//! Distribution distances and the numerical experiments that check the
//! solver order, the distillation/training loss gap and marginal
//! preservation of the SDE-then-ODE sampler.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridge::{GaussianCouplingOracle, Moments};
use crate::data::DatasetSpec;
use crate::error::{Error, Result};
use crate::model::Trainable;
use crate::rng::{self, Domain};
use crate::schedule::ScheduleSpec;
use crate::solver::{integrate_ode, BrownianOracle, OdeSolver};
use crate::train::{
    cbd_loss_on, cbt_loss_on, draw_batch, ConsistencySettings, LossWeighting, Metric, TrainingSchedule, Window,
};

pub const MIN_CLOUD_SIZE: usize = 100;
pub const DEFAULT_PROJECTIONS: usize = 256;

/// Steps of the fine reference solution in [`convergence_order`].
pub const REFERENCE_STEPS: usize = 1 << 14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub n_samples: usize,
    pub n_projections: Option<usize>,
    pub seed: u64,
}

fn check_clouds(a: &[Vec<f64>], b: &[Vec<f64>], min: usize) -> Result<usize> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::TooFewSamples { min, got: 0 });
    }
    let n = a.len().min(b.len());
    if n < min {
        return Err(Error::TooFewSamples { min, got: n });
    }
    let d = a[0].len();
    if let Some(p) = a.iter().chain(b).find(|p| p.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: p.len() });
    }
    Ok(d)
}

/// Squared 1D Wasserstein-2 distance between two sorted samples, coupling
/// their empirical quantile functions exactly (sizes may differ).
pub fn w2_squared_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = 0.0;
    let mut acc = 0.0;
    while i < n && j < m {
        // next breakpoint is min((i+1)/n, (j+1)/m); compare in integers
        let (ni, nj) = ((i + 1) * m, (j + 1) * n);
        let next = ni.min(nj) as f64 / (n * m) as f64;
        let d = a[i] - b[j];
        acc += (next - prev) * d * d;
        prev = next;
        if ni <= nj {
            i += 1;
        }
        if nj <= ni {
            j += 1;
        }
    }
    acc
}

fn unit_direction(seed: u64, k: usize, d: usize) -> Vec<f64> {
    let mut r = rng::stream(seed, Domain::Projection, k as u64);
    loop {
        let v = rng::normal_vec(&mut r, d);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// `√(mean over random unit directions θ of W₂²(θ·A, θ·B))`.
pub fn sliced_wasserstein2(a: &[Vec<f64>], b: &[Vec<f64>], n_projections: usize, seed: u64) -> Result<f64> {
    let d = check_clouds(a, b, MIN_CLOUD_SIZE)?;
    if n_projections == 0 {
        return Err(Error::Config("need at least one projection".into()));
    }
    let project = |cloud: &[Vec<f64>], dir: &[f64]| {
        let mut v: Vec<f64> = cloud.iter().map(|p| p.iter().zip(dir).map(|(x, w)| x * w).sum()).collect();
        v.sort_by(f64::total_cmp);
        v
    };
    let parts: Vec<f64> = (0..n_projections)
        .into_par_iter()
        .map(|k| {
            let dir = unit_direction(seed, k, d);
            w2_squared_sorted(&project(a, &dir), &project(b, &dir))
        })
        .collect();
    Ok((parts.iter().sum::<f64>() / n_projections as f64).sqrt())
}

fn mean_pairwise(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let rows: Vec<f64> = a
        .par_iter()
        .map(|p| {
            b.iter()
                .map(|q| p.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
                .sum::<f64>()
        })
        .collect();
    rows.iter().sum::<f64>() / (a.len() * b.len()) as f64
}

/// `2E‖X - Y‖ - E‖X - X'‖ - E‖Y - Y'‖` with V-statistics, hence non-negative.
pub fn energy_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    check_clouds(a, b, 1)?;
    Ok((2.0 * mean_pairwise(a, b) - mean_pairwise(a, a) - mean_pairwise(b, b)).max(0.0))
}

pub fn sliced_w2_report(a: &[Vec<f64>], b: &[Vec<f64>], n_projections: usize, seed: u64) -> Result<MetricReport> {
    Ok(MetricReport {
        metric: "sliced_w2".into(),
        value: sliced_wasserstein2(a, b, n_projections, seed)?,
        n_samples: a.len().min(b.len()),
        n_projections: Some(n_projections),
        seed,
    })
}

pub fn energy_report(a: &[Vec<f64>], b: &[Vec<f64>], seed: u64) -> Result<MetricReport> {
    Ok(MetricReport {
        metric: "energy".into(),
        value: energy_distance(a, b)?,
        n_samples: a.len().min(b.len()),
        n_projections: None,
        seed,
    })
}

/// A one-dimensional Gaussian-coupling ODE problem with a known flow.
#[derive(Debug, Clone)]
pub struct OracleProblem {
    pub spec: ScheduleSpec,
    pub oracle: GaussianCouplingOracle,
    pub y: f64,
    pub t_start: f64,
    pub t_end: f64,
    /// initial states at `t_start`
    pub starts: Vec<f64>,
}

impl OracleProblem {
    /// Integrates `[ε, T - γ]` from marginal quantiles at `T - γ`.
    pub fn new(spec: ScheduleSpec, oracle: GaussianCouplingOracle, y: f64) -> Result<Self> {
        let w = Window::for_spec(&spec);
        let t_start = spec.horizon() - w.gamma;
        let (mean, var) = oracle.marginal(&spec, t_start, &[y])?;
        let sd = var.sqrt();
        let starts = [-1.5, -0.5, 0.5, 1.5].iter().map(|k| mean[0] + k * sd).collect();
        Ok(Self { spec, oracle, y, t_start, t_end: w.eps, starts })
    }

    /// Unit Brownian bridge with `x₀ | y ~ N(0.3, 0.5²)` and `y = 1`.
    pub fn brownian_default() -> Self {
        let spec = ScheduleSpec::brownian(1.0).expect("valid preset");
        let oracle = GaussianCouplingOracle::new(vec![0.3], 0.5).expect("valid oracle");
        Self::new(spec, oracle, 1.0).expect("valid problem")
    }

    pub fn solve(&self, solver: OdeSolver, n_steps: usize) -> Result<Vec<f64>> {
        let pred = self.oracle.predictor(&self.spec);
        self.starts
            .iter()
            .map(|x| {
                integrate_ode(&self.spec, solver, &pred, &[*x], &[self.y], self.t_start, self.t_end, n_steps)
                    .map(|v| v[0])
            })
            .collect()
    }

    /// Exact flow: in one dimension the probability-flow ODE of a Gaussian
    /// marginal maps quantiles to quantiles.
    pub fn exact(&self) -> Result<Vec<f64>> {
        let (m0, v0) = self.oracle.marginal(&self.spec, self.t_start, &[self.y])?;
        let (m1, v1) = self.oracle.marginal(&self.spec, self.t_end, &[self.y])?;
        let ratio = (v1 / v0).sqrt();
        Ok(self.starts.iter().map(|x| m1[0] + ratio * (x - m0[0])).collect())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub steps: Vec<usize>,
    pub errors: Vec<f64>,
    /// least-squares slope of `log error` against `log N`, negated
    pub slope: f64,
    /// `|ref(2¹⁴) - ref(2¹³)|`, the reference's own uncertainty
    pub reference_gap: f64,
    pub floor_reached: bool,
}

/// Least-squares slope of `ys` against `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Global error of `solver` against a `2¹⁴`-step exponential-integrator
/// reference, and the fitted order.
pub fn convergence_order(solver: OdeSolver, problem: &OracleProblem, steps: &[usize]) -> Result<ConvergenceReport> {
    if steps.len() < 2 {
        return Err(Error::TooFewSteps { min: 2, got: steps.len() });
    }
    let reference = problem.solve(OdeSolver::Ei, REFERENCE_STEPS)?;
    let coarser = problem.solve(OdeSolver::Ei, REFERENCE_STEPS / 2)?;
    let reference_gap = max_abs_diff(&reference, &coarser);
    let errors: Vec<f64> = steps
        .iter()
        .map(|&n| problem.solve(solver, n).map(|x| max_abs_diff(&x, &reference)))
        .collect::<Result<_>>()?;
    let floor_reached = errors.iter().any(|e| *e <= 10.0 * reference_gap);
    let xs: Vec<f64> = steps.iter().map(|n| (*n as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.max(f64::MIN_POSITIVE).ln()).collect();
    Ok(ConvergenceReport { steps: steps.to_vec(), errors, slope: -ls_slope(&xs, &ys), reference_gap, floor_reached })
}

#[derive(Debug, Clone, Serialize)]
pub struct GapRow {
    pub dt: f64,
    pub l_cbd: f64,
    pub l_cbt: f64,
    pub gap: f64,
    /// `gap / Δt`
    pub ratio: f64,
}

/// Distillation and training losses of a fixed consistency function on one
/// common batch with common `(t, z)`, for each constant gap `Δt`. The
/// teacher is the closed-form posterior mean of `data`'s Gaussian oracle.
pub fn loss_gap_ladder(
    spec: &ScheduleSpec,
    data: &DatasetSpec,
    h: &dyn Trainable,
    dts: &[f64],
    n: usize,
    seed: u64,
) -> Result<Vec<GapRow>> {
    let oracle = data
        .oracle()
        .ok_or_else(|| Error::Config(format!("dataset `{}` has no closed-form oracle", data.id())))?;
    let teacher = oracle.predictor(spec);
    let window = Window::for_spec(spec);
    let batch = data.sample_n(seed, n);
    let draws = draw_batch(spec, &window, n, data.dim(), &mut rng::stream(seed, Domain::TrainStep, 0));
    dts.iter()
        .map(|&dt| {
            let settings = ConsistencySettings {
                schedule: TrainingSchedule::ConstantGap { dt },
                weighting: LossWeighting::Unit,
                metric: Metric::SquaredL2,
                window,
                iters: 0,
            };
            let l_cbd = cbd_loss_on(spec, h, h, &teacher, &settings, &batch, &draws)?.loss;
            let l_cbt = cbt_loss_on(spec, h, h, &settings, &batch, &draws)?.loss;
            let gap = (l_cbd - l_cbt).abs();
            Ok(GapRow { dt, l_cbd, l_cbt, gap, ratio: gap / dt })
        })
        .collect()
}

pub fn strictly_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] < w[0])
}

/// How the reverse-time sampler leaves the pinned point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StartMode {
    /// exact reverse SDE from `1` to `1 - γ`, then the exact ODE
    SdeSkip { gamma: f64 },
    /// the exact ODE started on the pinned point itself
    NoSkip,
}

/// Start time used for [`StartMode::NoSkip`]; the flow is singular at `1`.
pub const NO_SKIP_START: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone, Serialize)]
pub struct ZRow {
    pub s: f64,
    pub mean: f64,
    pub var: f64,
    pub expected_mean: f64,
    pub expected_var: f64,
    pub z_mean: f64,
    /// uses the normal-theory standard error `σ²√(2/(n-1))`
    pub z_var: f64,
}

impl ZRow {
    pub fn passes(&self, bound: f64) -> bool {
        self.z_mean.abs() < bound && self.z_var.abs() < bound
    }
}

/// Moment z-scores of the hybrid sampler on the unit Brownian bridge between
/// fixed scalars `x0` and `x1`, against `N((1 - s)x₀ + s x₁, s(1 - s))`.
pub fn marginal_preservation_test(
    mode: StartMode,
    s_grid: &[f64],
    n_paths: usize,
    x0: f64,
    x1: f64,
    seed: u64,
) -> Result<Vec<ZRow>> {
    if n_paths < 2 {
        return Err(Error::TooFewSamples { min: 2, got: n_paths });
    }
    let oracle = BrownianOracle;
    if let StartMode::SdeSkip { gamma } = mode {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1], got {gamma}")));
        }
    }
    if s_grid.iter().any(|s| !(*s > 0.0 && *s < 1.0)) {
        return Err(Error::Config("grid times must lie in (0, 1)".into()));
    }
    let path = |i: usize| -> Result<Vec<f64>> {
        let eps = rng::normal(&mut rng::stream(seed, Domain::Path, i as u64));
        s_grid
            .iter()
            .map(|&s| match mode {
                StartMode::SdeSkip { gamma } => {
                    let t_switch = 1.0 - gamma;
                    if s >= t_switch {
                        Ok(oracle.reverse_sde_with_noise(1.0, s, x1, x0, eps))
                    } else {
                        let x_switch = oracle.reverse_sde_with_noise(1.0, t_switch, x1, x0, eps);
                        oracle.ode(t_switch, s, x_switch, x0, x1)
                    }
                }
                StartMode::NoSkip => oracle.ode(NO_SKIP_START, s, x1, x0, x1),
            })
            .collect()
    };
    const CHUNK: usize = 1024;
    let parts: Vec<Result<Vec<Vec<f64>>>> = (0..n_paths.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| (c * CHUNK..((c + 1) * CHUNK).min(n_paths)).map(path).collect())
        .collect();
    let mut columns = vec![Vec::with_capacity(n_paths); s_grid.len()];
    for part in parts {
        for row in part? {
            for (col, v) in columns.iter_mut().zip(row) {
                col.push(v);
            }
        }
    }
    let n = n_paths as f64;
    Ok(s_grid
        .iter()
        .zip(&columns)
        .map(|(&s, col)| {
            let m = Moments::from_samples(col);
            let expected_mean = (1.0 - s) * x0 + s * x1;
            let expected_var = s * (1.0 - s);
            ZRow {
                s,
                mean: m.mean,
                var: m.var,
                expected_mean,
                expected_var,
                z_mean: (m.mean - expected_mean) / (expected_var / n).sqrt(),
                z_var: (m.var - expected_var) / (expected_var * (2.0 / (n - 1.0)).sqrt()),
            }
        })
        .collect())
}

/// Generated points next to their conditioning inputs, `[x̂, y]` per row.
pub fn joint_cloud(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Vec<Vec<f64>> {
    xs.iter().zip(ys).map(|(x, y)| x.iter().chain(y).copied().collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_coupling_handles_unequal_sizes() {
        // {0, 1} against {0, 0.5, 1}: quantile pieces of widths 1/3, 1/6, 1/6, 1/3
        let v = w2_squared_sorted(&[0.0, 1.0], &[0.0, 0.5, 1.0]);
        let expected = 1.0 / 6.0 * 0.25 + 1.0 / 6.0 * 0.25;
        assert!((v - expected).abs() < 1e-15);
        assert_eq!(w2_squared_sorted(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
    }

    #[test]
    fn clouds_need_points() {
        let a: Vec<Vec<f64>> = vec![];
        let b = vec![vec![0.0]; 200];
        assert!(sliced_wasserstein2(&a, &b, 4, 0).is_err());
        assert!(sliced_wasserstein2(&b[..50], &b, 4, 0).is_err());
        assert_eq!(sliced_wasserstein2(&b, &b, 4, 0).unwrap(), 0.0);
    }

    #[test]
    fn convergence_needs_steps() {
        let p = OracleProblem::brownian_default();
        assert!(convergence_order(OdeSolver::Ei, &p, &[]).is_err());
    }

    #[test]
    fn slope_of_a_power_law() {
        let xs: Vec<f64> = [8.0f64, 16.0, 32.0].iter().map(|v| v.ln()).collect();
        let ys: Vec<f64> = [8.0f64, 16.0, 32.0].iter().map(|v| (3.0 / v).ln()).collect();
        assert!((ls_slope(&xs, &ys) + 1.0).abs() < 1e-12);
    }
}
