//! Pinned-bridge marginals, forward simulation of the h-transformed SDE,
//! score/data-predictor transforms and an analytic Gaussian oracle.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};
use crate::schedule::{BridgeCoeffs, ScheduleSpec};

/// A coupled pair: data endpoint `x = x₀` and terminal endpoint `y = x_T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Coupling {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        check_dim(x.len(), y.len())?;
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::Config("coupling endpoints must be finite".into()));
        }
        Ok(Self { x, y })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// Anything that predicts `x₀` from `(x_t, t, y)`.
pub trait DataPredictor: Sync {
    fn predict(&self, x_t: &[f64], t: f64, y: &[f64]) -> Result<Vec<f64>>;
}

/// Predicts a fixed vector regardless of input.
#[derive(Debug, Clone)]
pub struct ConstantPredictor(pub Vec<f64>);

impl DataPredictor for ConstantPredictor {
    fn predict(&self, x_t: &[f64], _t: f64, _y: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.0.len(), x_t.len())?;
        Ok(self.0.clone())
    }
}

/// `a·y + b·x + c·z`.
pub fn bridge_point(coeffs: &BridgeCoeffs, x: &[f64], y: &[f64], z: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(y)
        .zip(z)
        .map(|((xi, yi), zi)| coeffs.a * yi + coeffs.b * xi + coeffs.c * zi)
        .collect()
}

/// Draws `x_t ~ N(a_t y + b_t x, c_t² I)` using the supplied standard-normal `z`.
pub fn sample_bridge_point(spec: &ScheduleSpec, t: f64, coupling: &Coupling, z: &[f64]) -> Result<Vec<f64>> {
    check_dim(coupling.dim(), z.len())?;
    check_dim(coupling.dim(), coupling.y.len())?;
    let coeffs = spec.bridge_coeffs(t)?;
    Ok(bridge_point(&coeffs, &coupling.x, &coupling.y, z))
}

/// Time grid and states of one simulated path.
#[derive(Debug, Clone)]
pub struct Path {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

/// Euler–Maruyama grid on `[0, T - γ_sim]`.
pub fn forward_grid(spec: &ScheduleSpec, n_steps: usize, gamma_sim: Option<f64>) -> Result<Vec<f64>> {
    if n_steps < 2 {
        return Err(Error::TooFewSteps { min: 2, got: n_steps });
    }
    let horizon = spec.horizon();
    let gamma = gamma_sim.unwrap_or(1e-3 * horizon);
    if !(gamma > 0.0 && gamma < horizon) {
        return Err(Error::Config(format!("gamma_sim must lie in (0, T), got {gamma}")));
    }
    let end = horizon - gamma;
    Ok((0..=n_steps).map(|k| end * k as f64 / n_steps as f64).collect())
}

/// Drift of the forward bridge SDE: `f x + g² ∇ log p_{T|t}(y | x)` with the
/// closed-form h-term `-(x - ᾱ_t y)/(α_t² ρ̄_t²)`.
fn forward_drift(spec: &ScheduleSpec, t: f64, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let e = spec.eval(t)?;
    let denom = e.alpha * e.alpha * e.rho_bar2;
    Ok(x.iter()
        .zip(y)
        .map(|(xi, yi)| e.f * xi - e.g2 * (xi - e.alpha_bar * yi) / denom)
        .collect())
}

fn forward_path_into<R: Rng + ?Sized>(
    spec: &ScheduleSpec,
    coupling: &Coupling,
    grid: &[f64],
    rng: &mut R,
    mut visit: impl FnMut(usize, &[f64]),
) -> Result<()> {
    let mut x = coupling.x.clone();
    visit(0, &x);
    for k in 0..grid.len() - 1 {
        let (t, dt) = (grid[k], grid[k + 1] - grid[k]);
        let drift = forward_drift(spec, t, &x, &coupling.y)?;
        let g = spec.diffusion2(t).sqrt();
        let sd = g * dt.sqrt();
        for (xi, di) in x.iter_mut().zip(&drift) {
            *xi += di * dt + sd * rng::normal(rng);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step: k + 1 });
        }
        visit(k + 1, &x);
    }
    Ok(())
}

/// Euler–Maruyama simulation of the forward bridge from `x₀ = x` towards `y`,
/// stopped at `T - γ_sim` (default `1e-3·T`) short of the pinned endpoint.
pub fn simulate_forward_sde<R: Rng + ?Sized>(
    spec: &ScheduleSpec,
    coupling: &Coupling,
    n_steps: usize,
    gamma_sim: Option<f64>,
    rng: &mut R,
) -> Result<Path> {
    let grid = forward_grid(spec, n_steps, gamma_sim)?;
    let mut states = Vec::with_capacity(grid.len());
    forward_path_into(spec, coupling, &grid, rng, |_, x| states.push(x.to_vec()))?;
    Ok(Path { times: grid, states })
}

/// Per-time empirical moments of many simulated paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub t: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub se_mean: Vec<f64>,
    pub se_var: Vec<f64>,
}

/// Simulates `n_paths` independent paths, path `i` on stream `(seed, i)`,
/// and reduces them to per-grid-time moments. Reduction order is fixed, so
/// the result does not depend on the thread count.
pub fn simulate_forward_moments(
    spec: &ScheduleSpec,
    coupling: &Coupling,
    n_steps: usize,
    gamma_sim: Option<f64>,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<MomentRow>> {
    if n_paths < 2 {
        return Err(Error::TooFewSamples { min: 2, got: n_paths });
    }
    let grid = forward_grid(spec, n_steps, gamma_sim)?;
    let d = coupling.dim();
    let width = grid.len() * d;
    const CHUNK: usize = 128;
    let chunks: Vec<Result<Vec<[f64; 4]>>> = (0..n_paths.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![[0.0; 4]; width];
            for i in c * CHUNK..((c + 1) * CHUNK).min(n_paths) {
                let mut rng = rng::stream(seed, Domain::Path, i as u64);
                forward_path_into(spec, coupling, &grid, &mut rng, |k, x| {
                    for (j, v) in x.iter().enumerate() {
                        let s = &mut acc[k * d + j];
                        let v2 = v * v;
                        s[0] += v;
                        s[1] += v2;
                        s[2] += v2 * v;
                        s[3] += v2 * v2;
                    }
                })?;
            }
            Ok(acc)
        })
        .collect();
    let mut total = vec![[0.0; 4]; width];
    for chunk in chunks {
        for (t, c) in total.iter_mut().zip(chunk?) {
            for m in 0..4 {
                t[m] += c[m];
            }
        }
    }
    let n = n_paths as f64;
    Ok(grid
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let mut row = MomentRow { t, mean: vec![], var: vec![], se_mean: vec![], se_var: vec![] };
            for j in 0..d {
                let s = total[k * d + j];
                let stats = Moments::from_power_sums(n, s);
                row.mean.push(stats.mean);
                row.var.push(stats.var);
                row.se_mean.push(stats.se_mean());
                row.se_var.push(stats.se_var());
            }
            row
        })
        .collect())
}

/// Sample moments with standard errors derived from the sample itself.
#[derive(Debug, Clone, Copy)]
pub struct Moments {
    pub n: f64,
    pub mean: f64,
    /// unbiased sample variance
    pub var: f64,
    /// fourth central moment
    pub m4: f64,
}

impl Moments {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let (mut s2, mut s4) = (0.0, 0.0);
        for x in xs {
            let d = x - mean;
            s2 += d * d;
            s4 += d * d * d * d;
        }
        Self { n, mean, var: s2 / (n - 1.0), m4: s4 / n }
    }

    fn from_power_sums(n: f64, s: [f64; 4]) -> Self {
        let mean = s[0] / n;
        let (e2, e3, e4) = (s[1] / n, s[2] / n, s[3] / n);
        let m2 = (e2 - mean * mean).max(0.0);
        let m4 = e4 - 4.0 * mean * e3 + 6.0 * mean * mean * e2 - 3.0 * mean.powi(4);
        Self { n, mean, var: m2 * n / (n - 1.0), m4: m4.max(0.0) }
    }

    pub fn se_mean(&self) -> f64 {
        (self.var / self.n).sqrt()
    }

    pub fn se_var(&self) -> f64 {
        let m2 = self.var * (self.n - 1.0) / self.n;
        ((self.m4 - m2 * m2).max(0.0) / self.n).sqrt()
    }
}

/// Score of the pinned bridge implied by a data prediction:
/// `-(x_t - a_t y - b_t x̂₀) / c_t²`.
pub fn score_from_data_pred(
    spec: &ScheduleSpec,
    t: f64,
    x_t: &[f64],
    y: &[f64],
    x_pred: &[f64],
) -> Result<Vec<f64>> {
    check_dim(x_t.len(), y.len())?;
    check_dim(x_t.len(), x_pred.len())?;
    let k = spec.bridge_coeffs(t)?;
    if k.c == 0.0 {
        return Err(Error::PinnedEndpoint { t });
    }
    let var = k.variance();
    Ok(x_t
        .iter()
        .zip(y)
        .zip(x_pred)
        .map(|((xt, yi), xp)| -(xt - k.a * yi - k.b * xp) / var)
        .collect())
}

/// Inverse of [`score_from_data_pred`]: `(x_t - a_t y + c_t² s) / b_t`.
pub fn data_pred_from_score(
    spec: &ScheduleSpec,
    t: f64,
    x_t: &[f64],
    y: &[f64],
    score: &[f64],
) -> Result<Vec<f64>> {
    check_dim(x_t.len(), y.len())?;
    check_dim(x_t.len(), score.len())?;
    let k = spec.bridge_coeffs(t)?;
    if k.c == 0.0 || k.b == 0.0 {
        return Err(Error::PinnedEndpoint { t });
    }
    let var = k.variance();
    Ok(x_t
        .iter()
        .zip(y)
        .zip(score)
        .map(|((xt, yi), s)| (xt - k.a * yi + var * s) / k.b)
        .collect())
}

/// Componentwise Gaussian `x₀ | y ~ N(μ₀, s₀²)`, which makes the bridge
/// marginal `q_{t|T}(· | y) = N(a_t y + b_t μ₀, b_t² s₀² + c_t²)` exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianCouplingOracle {
    pub mu0: Vec<f64>,
    pub s0: f64,
}

impl GaussianCouplingOracle {
    pub fn new(mu0: Vec<f64>, s0: f64) -> Result<Self> {
        if !(s0.is_finite() && s0 > 0.0) {
            return Err(Error::Config(format!("oracle s0 must be positive, got {s0}")));
        }
        Ok(Self { mu0, s0 })
    }

    pub fn dim(&self) -> usize {
        self.mu0.len()
    }

    /// Mean and variance of `q_{t|T}(· | y)` per component.
    pub fn marginal(&self, spec: &ScheduleSpec, t: f64, y: &[f64]) -> Result<(Vec<f64>, f64)> {
        check_dim(self.dim(), y.len())?;
        let k = spec.bridge_coeffs(t)?;
        let mean = y.iter().zip(&self.mu0).map(|(yi, m)| k.a * yi + k.b * m).collect();
        Ok((mean, k.b * k.b * self.s0 * self.s0 + k.variance()))
    }

    /// Log-density of the marginal (sum over components).
    pub fn log_density(&self, spec: &ScheduleSpec, t: f64, x_t: &[f64], y: &[f64]) -> Result<f64> {
        let (mean, var) = self.marginal(spec, t, y)?;
        check_dim(mean.len(), x_t.len())?;
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        Ok(x_t
            .iter()
            .zip(&mean)
            .map(|(x, m)| -0.5 * ((x - m) * (x - m) / var + var.ln() + ln2pi))
            .sum())
    }
}

/// `∇ log q_{t|T}(x_t | y)` for the Gaussian coupling.
pub fn oracle_posterior_score(
    oracle: &GaussianCouplingOracle,
    spec: &ScheduleSpec,
    t: f64,
    x_t: &[f64],
    y: &[f64],
) -> Result<Vec<f64>> {
    check_dim(oracle.dim(), x_t.len())?;
    let t = spec.check_time(t)?;
    if t <= 0.0 || t >= spec.horizon() {
        return Err(Error::PinnedEndpoint { t });
    }
    let (mean, var) = oracle.marginal(spec, t, y)?;
    Ok(x_t.iter().zip(&mean).map(|(x, m)| -(x - m) / var).collect())
}

/// The oracle's posterior mean `E[x₀ | x_t, y]` as a data predictor.
#[derive(Debug, Clone)]
pub struct OraclePredictor {
    pub oracle: GaussianCouplingOracle,
    pub spec: ScheduleSpec,
}

impl GaussianCouplingOracle {
    pub fn predictor(&self, spec: &ScheduleSpec) -> OraclePredictor {
        OraclePredictor { oracle: self.clone(), spec: spec.clone() }
    }
}

impl DataPredictor for OraclePredictor {
    fn predict(&self, x_t: &[f64], t: f64, y: &[f64]) -> Result<Vec<f64>> {
        let o = &self.oracle;
        check_dim(o.dim(), x_t.len())?;
        check_dim(o.dim(), y.len())?;
        let k = self.spec.bridge_coeffs(t)?;
        let s2 = o.s0 * o.s0;
        let denom = k.b * k.b * s2 + k.variance();
        if denom == 0.0 {
            // t = T: x_t carries no information about x₀
            return Ok(o.mu0.clone());
        }
        let gain = k.b * s2 / denom;
        Ok(x_t
            .iter()
            .zip(y)
            .zip(&o.mu0)
            .map(|((xt, yi), m)| m + gain * (xt - k.a * yi - k.b * m))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brownian() -> ScheduleSpec {
        ScheduleSpec::brownian(1.0).unwrap()
    }

    #[test]
    fn bridge_point_examples() {
        let c = Coupling::new(vec![2.0], vec![5.0]).unwrap();
        assert_eq!(sample_bridge_point(&brownian(), 0.0, &c, &[0.7]).unwrap(), vec![2.0]);
        let c = Coupling::new(vec![0.0], vec![1.0]).unwrap();
        assert_eq!(sample_bridge_point(&brownian(), 0.5, &c, &[1.0]).unwrap(), vec![1.0]);
        let ve = ScheduleSpec::ddbm_ve(80.0).unwrap();
        let c = Coupling::new(vec![1.0], vec![-1.0]).unwrap();
        assert_eq!(sample_bridge_point(&ve, 40.0, &c, &[0.0]).unwrap(), vec![0.5]);
        assert!(matches!(
            sample_bridge_point(&ve, 40.0, &c, &[0.0, 1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn forward_sde_needs_two_steps() {
        let c = Coupling::new(vec![0.0], vec![0.0]).unwrap();
        let mut r = rng::stream(0, Domain::Path, 0);
        assert!(matches!(
            simulate_forward_sde(&brownian(), &c, 1, None, &mut r),
            Err(Error::TooFewSteps { .. })
        ));
    }

    #[test]
    fn score_examples() {
        let s = score_from_data_pred(&brownian(), 0.5, &[0.6], &[1.0], &[0.0]).unwrap();
        assert!((s[0] + 0.4).abs() < 1e-12);
        // zero at the conditional mean
        let s = score_from_data_pred(&brownian(), 0.5, &[0.5 * 1.0 + 0.5 * 3.0], &[1.0], &[3.0]).unwrap();
        assert_eq!(s, vec![0.0]);
        assert!(matches!(
            score_from_data_pred(&brownian(), 1.0, &[0.0], &[0.0], &[0.0]),
            Err(Error::PinnedEndpoint { .. })
        ));
    }

    #[test]
    fn oracle_score_example() {
        let o = GaussianCouplingOracle::new(vec![0.0], 1.0).unwrap();
        let s = oracle_posterior_score(&o, &brownian(), 0.5, &[1.0], &[0.0]).unwrap();
        assert!((s[0] + 2.0).abs() < 1e-12);
        let (mean, _) = o.marginal(&brownian(), 0.3, &[2.0]).unwrap();
        assert_eq!(oracle_posterior_score(&o, &brownian(), 0.3, &mean, &[2.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn moments_from_power_sums_match_direct() {
        let xs: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64 * 0.3 - 1.0).collect();
        let direct = Moments::from_samples(&xs);
        let mut s = [0.0; 4];
        for x in &xs {
            s[0] += x;
            s[1] += x * x;
            s[2] += x * x * x;
            s[3] += x * x * x * x;
        }
        let sums = Moments::from_power_sums(xs.len() as f64, s);
        assert!((direct.mean - sums.mean).abs() < 1e-12);
        assert!((direct.var - sums.var).abs() < 1e-12);
        assert!((direct.m4 - sums.m4).abs() < 1e-10);
    }
}
