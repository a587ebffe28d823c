//! Independent numerical oracles: Simpson quadrature for the schedule
//! integrals, RK4 for the bridge ODE, Gaussian conditioning for the bridge
//! coefficients.

use bridgekit::bridge::{ConstantPredictor, Coupling};
use bridgekit::eval::{convergence_order, OracleProblem};
use bridgekit::model::{edm_coeffs, EndpointStats, Trainable, UniversalConsistency};
use bridgekit::schedule::{Preset, ScheduleSpec};
use bridgekit::solver::{ei_ode_step, OdeSolver};
use bridgekit::train::{
    cbd_loss_on, cbt_loss_on, ConsistencySettings, Draw, LossWeighting, Metric, TrainingSchedule, Window,
};

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = 2 * panels;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Splits at 1/2 so the kink of the I2SB rate sits on a panel edge.
fn integrate(f: impl Fn(f64) -> f64 + Copy, a: f64, b: f64) -> f64 {
    if a < 0.5 && b > 0.5 {
        simpson(f, a, 0.5, 1000) + simpson(f, 0.5, b, 1000)
    } else {
        simpson(f, a, b, 2000)
    }
}

/// (α_t, ρ_t²) by direct quadrature of the drift and diffusion rates.
fn quad_alpha_rho2(spec: &ScheduleSpec, t: f64) -> (f64, f64) {
    let log_alpha = |s: f64| simpson(|u| spec.drift(u), 0.0, s, 8);
    let rho2 = integrate(|s| spec.diffusion2(s) * (-2.0 * log_alpha(s)).exp(), 0.0, t);
    (log_alpha(t).exp(), rho2)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn closed_forms_match_simpson_quadrature() {
    for p in Preset::all_defaults() {
        let spec = ScheduleSpec::preset(p).unwrap();
        let horizon = spec.horizon();
        let (_, rho_t2) = quad_alpha_rho2(&spec, horizon);
        assert!(rel(spec.rho_terminal2(), rho_t2) < 1e-8, "{}", p.id());
        for u in [0.1, 0.25, 0.5, 0.75, 0.9] {
            let t = u * horizon;
            let e = spec.eval(t).unwrap();
            let (alpha, rho2) = quad_alpha_rho2(&spec, t);
            assert!(rel(e.alpha, alpha) < 1e-10, "{} alpha at {t}", p.id());
            assert!((e.rho2 - rho2).abs() < 1e-8 * rho_t2, "{} rho2 at {t}", p.id());
            assert!((e.rho_bar2 - (rho_t2 - rho2)).abs() < 1e-8 * rho_t2, "{} rho_bar2 at {t}", p.id());
            let alpha_t = quad_alpha_rho2(&spec, horizon).0;
            assert!(rel(e.alpha_bar, alpha / alpha_t) < 1e-10, "{} alpha_bar at {t}", p.id());
        }
    }
}

/// Conditioning `x_t` on `(x₀, x_T)` under the forward process
/// `x_t = α_t x₀ + α_t W(ρ_t²)` gives the bridge coefficients.
#[test]
fn bridge_coefficients_are_gaussian_conditioning() {
    for p in Preset::all_defaults() {
        let spec = ScheduleSpec::preset(p).unwrap();
        let horizon = spec.horizon();
        let (alpha_big, rho_big2) = quad_alpha_rho2(&spec, horizon);
        for u in [0.2, 0.5, 0.8] {
            let t = u * horizon;
            let (alpha, rho2) = quad_alpha_rho2(&spec, t);
            let cov = alpha * alpha_big * rho2;
            let var_end = alpha_big * alpha_big * rho_big2;
            let gain = cov / var_end;
            let (a, b) = (gain, alpha - gain * alpha_big);
            let var = alpha * alpha * rho2 - cov * gain;
            let k = spec.bridge_coeffs(t).unwrap();
            assert!(rel(k.a, a) < 1e-7, "{} a at {t}", p.id());
            assert!((k.b - b).abs() < 1e-7 * alpha, "{} b at {t}", p.id());
            assert!(rel(k.variance(), var) < 1e-6, "{} c² at {t}", p.id());
        }
    }
}

/// Bridge probability-flow velocity with a fixed data prediction, written out
/// from the forward process and the Doob h-transform.
fn velocity(spec: &ScheduleSpec, t: f64, x: f64, y: f64, x0: f64) -> f64 {
    let e = spec.eval(t).unwrap();
    let k = spec.bridge_coeffs(t).unwrap();
    let score = -(x - k.a * y - k.b * x0) / k.variance();
    let grad_log_h = (e.alpha_bar * y - x) / (e.alpha * e.alpha * e.rho_bar2);
    e.f * x - e.g2 * (0.5 * score - grad_log_h)
}

fn rk4(spec: &ScheduleSpec, t: f64, r: f64, x: f64, y: f64, x0: f64, n: usize) -> f64 {
    let h = (r - t) / n as f64;
    let mut x = x;
    for i in 0..n {
        let s = t + i as f64 * h;
        let k1 = velocity(spec, s, x, y, x0);
        let k2 = velocity(spec, s + 0.5 * h, x + 0.5 * h * k1, y, x0);
        let k3 = velocity(spec, s + 0.5 * h, x + 0.5 * h * k2, y, x0);
        let k4 = velocity(spec, s + h, x + h * k3, y, x0);
        x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    x
}

#[test]
fn ei_step_is_exact_for_constant_predictor_on_every_preset() {
    for p in Preset::all_defaults() {
        let spec = ScheduleSpec::preset(p).unwrap();
        let horizon = spec.horizon();
        let (t, r) = (0.8 * horizon, 0.2 * horizon);
        let (x, y, x0) = (0.7 * horizon.sqrt(), -0.4, 1.3);
        let reference = rk4(&spec, t, r, x, y, x0, 4000);
        let ei = ei_ode_step(&spec, t, r, &[x], &[y], &[x0]).unwrap()[0];
        assert!((ei - reference).abs() < 1e-8 * reference.abs().max(1.0), "{}: ei {ei} rk4 {reference}", p.id());
    }
}

#[test]
fn edm_coefficients_on_the_unit_brownian_bridge() {
    // t = 1/2 with unit, uncorrelated endpoints: a = b = 1/2, c² = 1/4.
    let spec = ScheduleSpec::brownian(1.0).unwrap();
    let k = edm_coeffs(&spec, 0.5, &EndpointStats::new(1.0, 1.0, 0.0)).unwrap();
    assert!((k.c_in - 2.0 / 3f64.sqrt()).abs() < 1e-14);
    assert!((k.c_skip - 2.0 / 3.0).abs() < 1e-14);
    assert!((k.c_out - (2.0f64 / 3.0).sqrt()).abs() < 1e-14);
}

/// With a point-mass data distribution the constant predictor is exact, so
/// the universal consistency function is the true one and both objectives
/// vanish.
#[test]
fn exact_consistency_function_has_zero_losses() {
    let x0 = vec![0.4, -1.1];
    for p in Preset::all_defaults() {
        let spec = ScheduleSpec::preset(p).unwrap();
        let window = Window::for_spec(&spec);
        let teacher = ConstantPredictor(x0.clone());
        let h = UniversalConsistency { spec: spec.clone(), predictor: &teacher, eps: window.eps };
        let settings = ConsistencySettings {
            schedule: TrainingSchedule::ConstantGap { dt: 0.1 },
            weighting: LossWeighting::Unit,
            metric: Metric::SquaredL2,
            window,
            iters: 0,
        };
        let horizon = spec.horizon();
        let batch: Vec<Coupling> = (0..8).map(|i| Coupling::new(x0.clone(), vec![0.3 * i as f64 - 1.0, 0.5]).unwrap()).collect();
        let draws: Vec<Draw> = (0..8)
            .map(|i| Draw { t: horizon * (0.15 + 0.1 * i as f64), z: vec![0.9 - 0.2 * i as f64, 0.1 * i as f64] })
            .collect();
        let scale = horizon * horizon;
        let cbt = cbt_loss_on(&spec, &h, &h, &settings, &batch, &draws).unwrap();
        let cbd = cbd_loss_on(&spec, &h, &h, &teacher, &settings, &batch, &draws).unwrap();
        assert!(cbt.loss < 1e-20 * scale, "{} cbt {}", p.id(), cbt.loss);
        assert!(cbd.loss < 1e-20 * scale, "{} cbd {}", p.id(), cbd.loss);
        assert_eq!(h.num_params(), 0);
    }
}

/// Euler's slope over 8..128 steps is depressed by the stiff start near
/// `T - γ`; with more steps it settles to first order.
#[test]
fn euler_reaches_first_order_with_enough_steps() {
    let report = convergence_order(OdeSolver::Euler, &OracleProblem::brownian_default(), &[256, 512, 1024]).unwrap();
    assert!(report.slope > 0.9 && report.slope < 1.2, "Euler slope {}", report.slope);
}

/// (α, ρ²) at 0.3·T and ρ_T², frozen from the quadrature above.
#[test]
fn frozen_schedule_values() {
    let frozen = [
        ("brownian", 1.0, 0.3, 1.0),
        ("i2sb", 1.0, 0.037070765814495935, 0.14106836025229585),
        ("ddbm-vp", 0.9851119396030626, 0.030454533953516823, 0.10517091807564768),
        ("ddbm-ve", 1.0, 576.0, 6400.0),
        ("bridge-tts-gmax", 1.0, 2.25255, 25.005),
        ("bridge-tts-vp", 0.6368156937803922, 1.465883102676619, 22135.873914162537),
    ];
    for (id, alpha, rho2, rho_t2) in frozen {
        let spec = ScheduleSpec::from_id(id).unwrap();
        let e = spec.eval(0.3 * spec.horizon()).unwrap();
        assert!(rel(e.alpha, alpha) < 1e-9, "{id} alpha {}", e.alpha);
        assert!(rel(e.rho2, rho2) < 1e-9, "{id} rho2 {}", e.rho2);
        assert!(rel(spec.rho_terminal2(), rho_t2) < 1e-9, "{id} rho_T2 {}", spec.rho_terminal2());
    }
}

