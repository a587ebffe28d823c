//! Property tests for the algebraic invariants.

use bridgekit::bridge::{data_pred_from_score, score_from_data_pred};
use bridgekit::eval::{energy_distance, sliced_wasserstein2};
use bridgekit::model::{EndpointStats, Model, Precondition, Role, Scheme, Trainable};
use bridgekit::sample::{slerp, PlanMode, TimestepPlan};
use bridgekit::schedule::{Preset, ScheduleSpec};
use bridgekit::solver::{ei_ode_step, OdeStepCoeffs};
use bridgekit::train::Window;
use proptest::prelude::*;

fn preset() -> impl Strategy<Value = Preset> {
    prop_oneof![
        (0.1..3.0f64).prop_map(|sigma| Preset::BrownianBridge { sigma }),
        (0.01..1.0f64, 0.0..2.0f64).prop_map(|(b0, d)| Preset::I2sb { beta0: b0, beta1: b0 + d }),
        (0.01..5.0f64).prop_map(|beta0| Preset::DdbmVp { beta0 }),
        (0.5..100.0f64).prop_map(|horizon| Preset::DdbmVe { horizon }),
        (0.001..0.5f64, 0.0..50.0f64).prop_map(|(beta0, beta_d)| Preset::BridgeTtsGmax { beta0, beta_d }),
        (0.001..0.5f64, 0.0..20.0f64).prop_map(|(beta0, beta_d)| Preset::BridgeTtsVp { beta0, beta_d }),
    ]
}

fn cloud(n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0..5.0f64, d), n)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn rho_split_sums_to_terminal(p in preset(), u in 0.0..=1.0f64) {
        let spec = ScheduleSpec::preset(p).unwrap();
        let e = spec.eval(u * spec.horizon()).unwrap();
        let total = spec.rho_terminal2();
        prop_assert!((e.rho2 + e.rho_bar2 - total).abs() <= 1e-9 * total);
    }

    #[test]
    fn step_coefficients_carry_bridge_coefficients(p in preset(), u in 0.01..0.99f64, v in 0.0..1.0f64) {
        let spec = ScheduleSpec::preset(p).unwrap();
        let t = u * spec.horizon();
        let r = v * t;
        let k = OdeStepCoeffs::new(&spec, t, r).unwrap();
        let (bt, br) = (spec.bridge_coeffs(t).unwrap(), spec.bridge_coeffs(r).unwrap());
        prop_assert!(close(k.k1 * bt.a + k.k3, br.a, 1e-9));
        prop_assert!(close(k.k1 * bt.b + k.k2, br.b, 1e-9));
        prop_assert!((k.k1 * bt.c - br.c).abs() <= 1e-9 * br.c.max(bt.c).max(1e-12));
    }

    #[test]
    fn score_and_data_prediction_invert(
        p in preset(), u in 0.05..0.95f64,
        x in prop::collection::vec(-3.0..3.0f64, 3),
        y in prop::collection::vec(-3.0..3.0f64, 3),
        xp in prop::collection::vec(-3.0..3.0f64, 3),
    ) {
        let spec = ScheduleSpec::preset(p).unwrap();
        let t = u * spec.horizon();
        let s = score_from_data_pred(&spec, t, &x, &y, &xp).unwrap();
        let back = data_pred_from_score(&spec, t, &x, &y, &s).unwrap();
        let k = spec.bridge_coeffs(t).unwrap();
        // the round trip loses about |x_t| / b_t in absolute terms
        let scale = (1.0 + x.iter().chain(&y).fold(0.0f64, |m, v| m.max(v.abs()))) / k.b;
        for (a, b) in back.iter().zip(&xp) {
            prop_assert!((a - b).abs() <= 1e-9 * scale, "{a} vs {b}");
        }
    }

    /// Two exact steps through an intermediate time equal one step.
    #[test]
    fn ei_steps_compose_for_constant_predictor(
        p in preset(), u in 0.05..0.95f64, v in 0.0..1.0f64, w in 0.0..1.0f64,
        x in -2.0..2.0f64, y in -2.0..2.0f64, x0 in -2.0..2.0f64,
    ) {
        let spec = ScheduleSpec::preset(p).unwrap();
        let t = u * spec.horizon();
        let s = v * t;
        let r = w * s;
        let x = x * spec.horizon().sqrt();
        let direct = ei_ode_step(&spec, t, r, &[x], &[y], &[x0]).unwrap()[0];
        let mid = ei_ode_step(&spec, t, s, &[x], &[y], &[x0]).unwrap();
        let two = ei_ode_step(&spec, s, r, &mid, &[y], &[x0]).unwrap()[0];
        prop_assert!(close(direct, two, 1e-8), "{direct} vs {two}");
    }

    #[test]
    fn metrics_vanish_on_identical_clouds(a in cloud(120, 2), seed in any::<u64>()) {
        prop_assert_eq!(sliced_wasserstein2(&a, &a, 32, seed).unwrap(), 0.0);
        prop_assert!(energy_distance(&a, &a).unwrap().abs() < 1e-12);
    }

    #[test]
    fn metrics_are_symmetric(a in cloud(120, 2), b in cloud(120, 2), seed in any::<u64>()) {
        let ab = sliced_wasserstein2(&a, &b, 32, seed).unwrap();
        let ba = sliced_wasserstein2(&b, &a, 32, seed).unwrap();
        prop_assert!(close(ab, ba, 1e-12));
        let ab = energy_distance(&a, &b).unwrap();
        let ba = energy_distance(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-10);
    }

    #[test]
    fn metrics_ignore_point_order(a in cloud(120, 2), b in cloud(120, 2), shift in 1usize..119, seed in any::<u64>()) {
        let mut c = b.clone();
        c.rotate_left(shift);
        c.reverse();
        let sw = sliced_wasserstein2(&a, &b, 32, seed).unwrap();
        prop_assert!(close(sw, sliced_wasserstein2(&a, &c, 32, seed).unwrap(), 1e-12));
        prop_assert!((energy_distance(&a, &b).unwrap() - energy_distance(&a, &c).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn slerp_keeps_endpoints(
        a in prop::collection::vec(-3.0..3.0f64, 4),
        b in prop::collection::vec(-3.0..3.0f64, 4),
    ) {
        prop_assert_eq!(slerp(&a, &b, 0.0), a.clone());
        prop_assert_eq!(slerp(&a, &b, 1.0), b.clone());
        let mid = slerp(&a, &b, 0.5);
        prop_assert!(mid.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn slerp_of_orthonormal_pair_stays_on_the_sphere(angle in 0.0..std::f64::consts::TAU, w in 0.0..=1.0f64) {
        let a = [angle.cos(), angle.sin()];
        let b = [-angle.sin(), angle.cos()];
        let m = slerp(&a, &b, w);
        prop_assert!(((m[0] * m[0] + m[1] * m[1]).sqrt() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn plans_decrease_strictly_and_avoid_eps(p in preset(), nfe in 2usize..16, pinned in any::<bool>(), u in 0.01..1.0f64) {
        let spec = ScheduleSpec::preset(p).unwrap();
        let w = Window::for_spec(&spec);
        let top = spec.horizon() - w.gamma;
        let mode = if pinned { PlanMode::PinnedSecond { t2: w.eps + u * (top - w.eps) } } else { PlanMode::Uniform };
        let plan = TimestepPlan::new(&spec, &w, nfe, mode).unwrap();
        prop_assert_eq!(plan.nfe(), nfe);
        prop_assert_eq!(plan.timesteps[0], spec.horizon());
        prop_assert!(plan.timesteps.windows(2).all(|s| s[1] < s[0]));
        prop_assert!(*plan.timesteps.last().unwrap() > w.eps);
        prop_assert!(plan.validate(&spec, &w).is_ok());
    }

    #[test]
    fn consistency_models_are_identity_at_eps(
        p in preset(), scheme in 0usize..3, seed in any::<u64>(),
        x in prop::collection::vec(-10.0..10.0f64, 2),
        y in prop::collection::vec(-10.0..10.0f64, 2),
    ) {
        let spec = ScheduleSpec::preset(p).unwrap();
        let w = Window::for_spec(&spec);
        let scheme = [Scheme::EdmStyle, Scheme::I2sbStyle, Scheme::Universal][scheme];
        let stats = (scheme == Scheme::EdmStyle).then(|| EndpointStats::new(1.0, 2.0, 0.5));
        let pre = Precondition::new(scheme, Role::Consistency, stats, w.eps).unwrap();
        let model = Model::new(spec, pre, 2, &[8, 8], seed).unwrap();
        prop_assert_eq!(model.eval(&x, w.eps, &y).unwrap(), x);
    }
}

/// `a_t` rises from 0 to 1 and `b_t` falls to 0.
#[test]
fn bridge_weights_are_monotone() {
    for p in Preset::all_defaults() {
        let spec = ScheduleSpec::preset(p).unwrap();
        let n = 10_000;
        let ks: Vec<_> = (0..=n).map(|i| spec.bridge_coeffs(spec.horizon() * i as f64 / n as f64).unwrap()).collect();
        for w in ks.windows(2) {
            assert!(w[1].a >= w[0].a - 1e-15, "{}: a decreases", p.id());
            assert!(w[1].b <= w[0].b + 1e-15, "{}: b increases", p.id());
        }
        assert!(ks[0].a.abs() < 1e-15 && (ks[n].a - 1.0).abs() < 1e-12, "{}", p.id());
        assert!(ks[n].b.abs() < 1e-15, "{}", p.id());
    }
}
