//! Integrators for the bridge probability-flow ODE and the first-order
//! posterior-sampling step, plus closed-form Brownian-bridge flows.
//!
//! The bridge ODE in data-prediction form is
//!
//! ```text
//! dx/dt = f x - ½ g² (x - ᾱ_t y)/(α_t² ρ̄_t²) + ½ g² (x - α_t x_θ)/(α_t² ρ_t²)
//! ```
//!
//! Its linear part integrates exactly; freezing `x_θ` over one step gives the
//! first-order exponential-integrator update `x_r = k1 x_t + k2 x_θ + k3 y`.

use rand::Rng;

use crate::bridge::{bridge_point, check_dim, DataPredictor};
use crate::error::{Error, Result};
use crate::rng;
use crate::schedule::{Preset, ScheduleSpec};

/// Coefficients of `x_t`, `x_θ` and `y` in one exponential-integrator step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeStepCoeffs {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
}

impl OdeStepCoeffs {
    /// Coefficients for the step `t → r`. Any `r` inside `(0, T)` is accepted
    /// here; direction checks belong to the step functions.
    pub fn new(spec: &ScheduleSpec, t: f64, r: f64) -> Result<Self> {
        let et = spec.eval(t)?;
        let er = spec.eval(r)?;
        if et.t == er.t {
            return Ok(Self { k1: 1.0, k2: 0.0, k3: 0.0 });
        }
        let (rho_t, rho_bar_t) = (et.rho(), et.rho_bar());
        let (rho_r, rho_bar_r) = (er.rho(), er.rho_bar());
        if rho_t == 0.0 || rho_bar_t == 0.0 {
            return Err(Error::PinnedEndpoint { t: et.t });
        }
        let rho_t2 = spec.rho_terminal2();
        let alpha_t_end = spec.alpha_terminal();
        let k1 = (er.alpha * rho_r * rho_bar_r) / (et.alpha * rho_t * rho_bar_t);
        let k2 = er.alpha / rho_t2 * (er.rho_bar2 - rho_bar_t * rho_r * rho_bar_r / rho_t);
        let k3 = er.alpha / (alpha_t_end * rho_t2) * (er.rho2 - rho_t * rho_r * rho_bar_r / rho_bar_t);
        Ok(Self { k1, k2, k3 })
    }

    pub fn apply(&self, x_t: &[f64], x_pred: &[f64], y: &[f64]) -> Vec<f64> {
        x_t.iter()
            .zip(x_pred)
            .zip(y)
            .map(|((x, p), yi)| self.k1 * x + self.k2 * p + self.k3 * yi)
            .collect()
    }
}

fn check_backward(t: f64, r: f64) -> Result<()> {
    if r > t || !r.is_finite() || !t.is_finite() {
        return Err(Error::InvalidStep { t, r });
    }
    Ok(())
}

/// First-order exponential-integrator step `t → r` (`r ≤ t`) given the data
/// prediction at `(x_t, t)`.
pub fn ei_ode_step(
    spec: &ScheduleSpec,
    t: f64,
    r: f64,
    x_t: &[f64],
    y: &[f64],
    x_pred: &[f64],
) -> Result<Vec<f64>> {
    check_backward(t, r)?;
    check_dim(x_t.len(), y.len())?;
    check_dim(x_t.len(), x_pred.len())?;
    Ok(OdeStepCoeffs::new(spec, t, r)?.apply(x_t, x_pred, y))
}

/// Vector field of the bridge ODE in data-prediction form.
pub fn ode_velocity(spec: &ScheduleSpec, t: f64, x_t: &[f64], y: &[f64], x_pred: &[f64]) -> Result<Vec<f64>> {
    check_dim(x_t.len(), y.len())?;
    check_dim(x_t.len(), x_pred.len())?;
    let e = spec.eval(t)?;
    let a2 = e.alpha * e.alpha;
    let to_y = if e.g2 == 0.0 { 0.0 } else { 0.5 * e.g2 / (a2 * e.rho_bar2) };
    let to_x0 = if e.g2 == 0.0 { 0.0 } else { 0.5 * e.g2 / (a2 * e.rho2) };
    if !(to_y.is_finite() && to_x0.is_finite()) {
        return Err(Error::PinnedEndpoint { t: e.t });
    }
    Ok(x_t
        .iter()
        .zip(y)
        .zip(x_pred)
        .map(|((x, yi), p)| e.f * x - to_y * (x - e.alpha_bar * yi) + to_x0 * (x - e.alpha * p))
        .collect())
}

/// Explicit Euler step of the bridge ODE, `x_r = x_t + (r - t)·v(x_t, t)`.
pub fn euler_ode_step(
    spec: &ScheduleSpec,
    t: f64,
    r: f64,
    x_t: &[f64],
    y: &[f64],
    x_pred: &[f64],
) -> Result<Vec<f64>> {
    check_backward(t, r)?;
    if r == t {
        check_dim(x_t.len(), y.len())?;
        return Ok(x_t.to_vec());
    }
    let v = ode_velocity(spec, t, x_t, y, x_pred)?;
    let h = r - t;
    Ok(x_t.iter().zip(&v).map(|(x, vi)| x + h * vi).collect())
}

/// Posterior sampling `x_r ~ q_{r|0T}(· | x₀ = x̂₀, x_T = y)`.
pub fn posterior_sde_step(
    spec: &ScheduleSpec,
    t: f64,
    r: f64,
    x0_hat: &[f64],
    y: &[f64],
    z: &[f64],
) -> Result<Vec<f64>> {
    check_backward(t, r)?;
    check_dim(x0_hat.len(), y.len())?;
    check_dim(x0_hat.len(), z.len())?;
    let k = spec.bridge_coeffs(r)?;
    Ok(bridge_point(&k, x0_hat, y, z))
}

/// Which ODE integrator to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OdeSolver {
    Ei,
    Euler,
}

impl OdeSolver {
    pub fn step(
        self,
        spec: &ScheduleSpec,
        t: f64,
        r: f64,
        x_t: &[f64],
        y: &[f64],
        x_pred: &[f64],
    ) -> Result<Vec<f64>> {
        match self {
            OdeSolver::Ei => ei_ode_step(spec, t, r, x_t, y, x_pred),
            OdeSolver::Euler => euler_ode_step(spec, t, r, x_t, y, x_pred),
        }
    }
}

/// `n` uniform steps from `t_start` down to `t_end`, querying `predictor`
/// once per step.
#[allow(clippy::too_many_arguments)]
pub fn integrate_ode(
    spec: &ScheduleSpec,
    solver: OdeSolver,
    predictor: &dyn DataPredictor,
    x_start: &[f64],
    y: &[f64],
    t_start: f64,
    t_end: f64,
    n_steps: usize,
) -> Result<Vec<f64>> {
    if n_steps == 0 {
        return Err(Error::TooFewSteps { min: 1, got: 0 });
    }
    check_backward(t_start, t_end)?;
    let mut x = x_start.to_vec();
    let h = (t_start - t_end) / n_steps as f64;
    for k in 0..n_steps {
        let t = t_start - h * k as f64;
        let r = if k + 1 == n_steps { t_end } else { t_start - h * (k + 1) as f64 };
        let pred = predictor.predict(&x, t, y)?;
        x = solver.step(spec, t, r, &x, y, &pred)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step: k + 1 });
        }
    }
    Ok(x)
}

/// Closed-form reverse SDE and PF-ODE flows of the unit Brownian bridge
/// between fixed scalar endpoints.
#[derive(Debug, Clone, Copy)]
pub struct BrownianOracle;

impl BrownianOracle {
    /// Only the `T = 1`, `σ = 1` Brownian bridge has these flows.
    pub fn new(spec: &ScheduleSpec) -> Result<Self> {
        match spec.as_preset() {
            Some(Preset::BrownianBridge { sigma: 1.0 }) => Ok(Self),
            Some(Preset::BrownianBridge { sigma }) => Err(Error::NotBrownian(format!("sigma = {sigma}"))),
            _ => Err(Error::NotBrownian(format!("schedule `{}`", spec.id()))),
        }
    }

    /// Exact reverse-SDE transition `t → s` (`0 < s < t ≤ 1`):
    /// `x_s = (s/t) x_t + (1 - s/t) x₀ + s √(1/s - 1/t) ε`.
    pub fn reverse_sde<R: Rng + ?Sized>(&self, t: f64, s: f64, x_t: f64, x0: f64, rng: &mut R) -> Result<f64> {
        if !(0.0 < s && s < t && t <= 1.0) {
            return Err(Error::InvalidStep { t, r: s });
        }
        let eps = rng::normal(rng);
        Ok(self.reverse_sde_with_noise(t, s, x_t, x0, eps))
    }

    pub fn reverse_sde_with_noise(&self, t: f64, s: f64, x_t: f64, x0: f64, eps: f64) -> f64 {
        let ratio = s / t;
        ratio * x_t + (1.0 - ratio) * x0 + s * (1.0 / s - 1.0 / t).sqrt() * eps
    }

    /// Exact PF-ODE transition `t → s` (`0 < s < t < 1`).
    pub fn ode(&self, t: f64, s: f64, x_t: f64, x0: f64, x1: f64) -> Result<f64> {
        if !(0.0 < s && s <= t && t < 1.0) {
            return Err(Error::InvalidStep { t, r: s });
        }
        let kappa = (s * (1.0 - s)).sqrt() / (t * (1.0 - t)).sqrt();
        Ok(kappa * x_t + (s - kappa * t) * x1 + (1.0 - s - kappa * (1.0 - t)) * x0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brownian() -> ScheduleSpec {
        ScheduleSpec::brownian(1.0).unwrap()
    }

    #[test]
    fn degenerate_step_is_identity() {
        for p in Preset::all_defaults() {
            let s = ScheduleSpec::preset(p).unwrap();
            let t = 0.37 * s.horizon();
            let k = OdeStepCoeffs::new(&s, t, t).unwrap();
            assert_eq!((k.k1, k.k2, k.k3), (1.0, 0.0, 0.0));
            assert_eq!(ei_ode_step(&s, t, t, &[1.5], &[2.0], &[9.0]).unwrap(), vec![1.5]);
            assert_eq!(euler_ode_step(&s, t, t, &[1.5], &[2.0], &[9.0]).unwrap(), vec![1.5]);
        }
    }

    #[test]
    fn forward_steps_rejected() {
        assert!(matches!(
            ei_ode_step(&brownian(), 0.3, 0.4, &[0.0], &[0.0], &[0.0]),
            Err(Error::InvalidStep { .. })
        ));
        assert!(matches!(
            posterior_sde_step(&brownian(), 0.3, 0.4, &[0.0], &[0.0], &[0.0]),
            Err(Error::InvalidStep { .. })
        ));
    }

    #[test]
    fn posterior_step_examples() {
        let s = brownian();
        assert_eq!(posterior_sde_step(&s, 0.5, 0.0, &[3.0], &[1.0], &[0.4]).unwrap(), vec![3.0]);
        assert_eq!(posterior_sde_step(&s, 1.0, 0.5, &[0.0], &[1.0], &[0.0]).unwrap(), vec![0.5]);
    }

    #[test]
    fn vanishing_diffusion_reduces_to_pure_drift() {
        // g² vanishes on [0, 0.5]; the schedule itself stays valid on [0, 1]
        let s = ScheduleSpec::custom(|_| -0.7, |t: f64| if t < 0.5 { 0.0 } else { (t - 0.5).powi(2) }, 1.0).unwrap();
        let x = euler_ode_step(&s, 0.4, 0.3, &[2.0], &[1.0], &[5.0]).unwrap();
        assert!((x[0] - (2.0 + -0.7 * 2.0 * (0.3 - 0.4))).abs() < 1e-14);
    }

    #[test]
    fn brownian_oracle_rejects_other_schedules() {
        assert!(BrownianOracle::new(&brownian()).is_ok());
        assert!(matches!(BrownianOracle::new(&ScheduleSpec::brownian(2.0).unwrap()), Err(Error::NotBrownian(_))));
        assert!(matches!(BrownianOracle::new(&ScheduleSpec::ddbm_ve(80.0).unwrap()), Err(Error::NotBrownian(_))));
    }

    #[test]
    fn brownian_ode_is_a_semigroup() {
        let o = BrownianOracle;
        let (x0, x1) = (-0.4, 1.3);
        let direct = o.ode(0.9, 0.2, 0.77, x0, x1).unwrap();
        let mid = o.ode(0.9, 0.55, 0.77, x0, x1).unwrap();
        let composed = o.ode(0.55, 0.2, mid, x0, x1).unwrap();
        assert!((direct - composed).abs() < 1e-9);
    }
}
