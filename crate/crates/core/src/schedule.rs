//! Noise-schedule algebra for linear-drift diffusion bridges.
//!
//! A schedule is described by its drift rate `f(t)` and diffusion rate `g²(t)`
//! on `[0, T]`. From these follow
//!
//! ```text
//! α_t  = exp(∫₀ᵗ f),          ᾱ_t  = exp(-∫ₜᵀ f) = α_t / α_T,
//! ρ_t² = ∫₀ᵗ g²/α²,           ρ̄_t² = ∫ₜᵀ g²/α² = ρ_T² - ρ_t²,
//! ```
//!
//! and the pinned bridge `x_t | x₀, x_T ~ N(a_t x_T + b_t x₀, c_t² I)` with
//! `a_t = ᾱ_t ρ_t²/ρ_T²`, `b_t = α_t ρ̄_t²/ρ_T²`, `c_t² = α_t² ρ̄_t² ρ_t²/ρ_T²`.
//!
//! The six presets use closed forms. Custom schedules integrate `f` and
//! `g²/α²` once on a 4096-knot grid (8-point Gauss–Legendre per panel) and
//! answer queries by cubic Hermite interpolation with exact knot slopes.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{GaussRule, HermiteTable};

/// Absolute slack (scaled by `max(1, T)`) within which out-of-range times are
/// snapped onto the boundary.
pub const BOUNDARY_SNAP: f64 = 1e-12;

const CUSTOM_KNOTS: usize = 4096;
const CUSTOM_RULE_POINTS: usize = 8;

/// The closed-form schedules, addressable by string id in configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Preset {
    #[serde(rename = "brownian")]
    BrownianBridge {
        #[serde(default = "defaults::sigma")]
        sigma: f64,
    },
    I2sb {
        #[serde(default = "defaults::i2sb_beta0")]
        beta0: f64,
        #[serde(default = "defaults::i2sb_beta1")]
        beta1: f64,
    },
    DdbmVp {
        #[serde(default = "defaults::ddbm_vp_beta0")]
        beta0: f64,
    },
    DdbmVe {
        #[serde(default = "defaults::ddbm_ve_horizon")]
        horizon: f64,
    },
    BridgeTtsGmax {
        #[serde(default = "defaults::tts_beta0")]
        beta0: f64,
        #[serde(default = "defaults::tts_gmax_beta_d")]
        beta_d: f64,
    },
    BridgeTtsVp {
        #[serde(default = "defaults::tts_beta0")]
        beta0: f64,
        #[serde(default = "defaults::tts_vp_beta_d")]
        beta_d: f64,
    },
}

mod defaults {
    pub fn sigma() -> f64 {
        1.0
    }
    pub fn i2sb_beta0() -> f64 {
        0.1
    }
    pub fn i2sb_beta1() -> f64 {
        0.3
    }
    pub fn ddbm_vp_beta0() -> f64 {
        0.1
    }
    pub fn ddbm_ve_horizon() -> f64 {
        80.0
    }
    pub fn tts_beta0() -> f64 {
        0.01
    }
    pub fn tts_gmax_beta_d() -> f64 {
        49.99
    }
    pub fn tts_vp_beta_d() -> f64 {
        19.99
    }
}

pub const PRESET_IDS: [&str; 6] = [
    "brownian",
    "i2sb",
    "ddbm-vp",
    "ddbm-ve",
    "bridge-tts-gmax",
    "bridge-tts-vp",
];

impl Preset {
    /// Preset with its default parameters.
    pub fn from_id(id: &str) -> Result<Self> {
        Ok(match id {
            "brownian" => Preset::BrownianBridge { sigma: defaults::sigma() },
            "i2sb" => Preset::I2sb {
                beta0: defaults::i2sb_beta0(),
                beta1: defaults::i2sb_beta1(),
            },
            "ddbm-vp" => Preset::DdbmVp { beta0: defaults::ddbm_vp_beta0() },
            "ddbm-ve" => Preset::DdbmVe { horizon: defaults::ddbm_ve_horizon() },
            "bridge-tts-gmax" => Preset::BridgeTtsGmax {
                beta0: defaults::tts_beta0(),
                beta_d: defaults::tts_gmax_beta_d(),
            },
            "bridge-tts-vp" => Preset::BridgeTtsVp {
                beta0: defaults::tts_beta0(),
                beta_d: defaults::tts_vp_beta_d(),
            },
            other => return Err(Error::InvalidSchedule(format!("unknown preset id `{other}`"))),
        })
    }

    pub fn id(&self) -> &'static str {
        match self {
            Preset::BrownianBridge { .. } => "brownian",
            Preset::I2sb { .. } => "i2sb",
            Preset::DdbmVp { .. } => "ddbm-vp",
            Preset::DdbmVe { .. } => "ddbm-ve",
            Preset::BridgeTtsGmax { .. } => "bridge-tts-gmax",
            Preset::BridgeTtsVp { .. } => "bridge-tts-vp",
        }
    }

    pub fn all_defaults() -> Vec<Preset> {
        PRESET_IDS
            .iter()
            .map(|id| Preset::from_id(id).expect("known id"))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidSchedule(format!("{name} must be positive and finite, got {v}")))
            }
        };
        match *self {
            Preset::BrownianBridge { sigma } => positive("sigma", sigma),
            Preset::I2sb { beta0, beta1 } => {
                positive("beta0", beta0)?;
                positive("beta1", beta1)?;
                if beta1 < beta0 {
                    return Err(Error::InvalidSchedule(format!(
                        "i2sb needs beta1 >= beta0, got beta0={beta0}, beta1={beta1}"
                    )));
                }
                Ok(())
            }
            Preset::DdbmVp { beta0 } => positive("beta0", beta0),
            Preset::DdbmVe { horizon } => positive("horizon", horizon),
            Preset::BridgeTtsGmax { beta0, beta_d } | Preset::BridgeTtsVp { beta0, beta_d } => {
                positive("beta0", beta0)?;
                if !(beta_d.is_finite() && beta_d >= 0.0) {
                    return Err(Error::InvalidSchedule(format!("beta_d must be >= 0, got {beta_d}")));
                }
                Ok(())
            }
        }
    }

    fn horizon(&self) -> f64 {
        match *self {
            Preset::DdbmVe { horizon } => horizon,
            _ => 1.0,
        }
    }

    fn drift(&self, t: f64) -> f64 {
        match *self {
            Preset::DdbmVp { beta0 } => -0.5 * beta0,
            Preset::BridgeTtsVp { beta0, beta_d } => -0.5 * beta0 - 0.5 * beta_d * t,
            _ => 0.0,
        }
    }

    fn diffusion2(&self, t: f64) -> f64 {
        match *self {
            Preset::BrownianBridge { sigma } => sigma * sigma,
            Preset::I2sb { beta0, beta1 } => {
                let (eta0, eta1) = i2sb_etas(beta0, beta1);
                let g = eta1 - eta0 * (2.0 * t - 1.0).abs();
                g * g
            }
            Preset::DdbmVp { beta0 } => beta0,
            Preset::DdbmVe { .. } => 2.0 * t,
            Preset::BridgeTtsGmax { beta0, beta_d } | Preset::BridgeTtsVp { beta0, beta_d } => {
                beta0 + beta_d * t
            }
        }
    }

    /// (α_t, ᾱ_t, ρ_t², ρ̄_t²) in closed form.
    fn closed_form(&self, t: f64) -> (f64, f64, f64, f64) {
        match *self {
            Preset::BrownianBridge { sigma } => {
                let s2 = sigma * sigma;
                (1.0, 1.0, s2 * t, s2 * (1.0 - t))
            }
            Preset::I2sb { beta0, beta1 } => {
                let (eta0, eta1) = i2sb_etas(beta0, beta1);
                // g² is symmetric about 1/2, so ρ̄_t² = ρ²_{1-t}.
                (1.0, 1.0, i2sb_rho2(eta0, eta1, t), i2sb_rho2(eta0, eta1, 1.0 - t))
            }
            Preset::DdbmVp { beta0 } => {
                let alpha = (-0.5 * beta0 * t).exp();
                let alpha_bar = (0.5 * beta0 * (1.0 - t)).exp();
                let rho2 = (beta0 * t).exp_m1();
                let rho_bar2 = (beta0 * t).exp() * (beta0 * (1.0 - t)).exp_m1();
                (alpha, alpha_bar, rho2, rho_bar2)
            }
            Preset::DdbmVe { horizon } => (1.0, 1.0, t * t, (horizon - t) * (horizon + t)),
            Preset::BridgeTtsGmax { beta0, beta_d } => {
                let rho2 = beta0 * t + 0.5 * beta_d * t * t;
                let rho_bar2 = (1.0 - t) * (beta0 + 0.5 * beta_d * (1.0 + t));
                (1.0, 1.0, rho2, rho_bar2)
            }
            Preset::BridgeTtsVp { beta0, beta_d } => {
                let e = |s: f64| beta0 * s + 0.5 * beta_d * s * s;
                let alpha = (-0.5 * e(t)).exp();
                let alpha_bar = (0.5 * (e(1.0) - e(t))).exp();
                let rho2 = e(t).exp_m1();
                let rho_bar2 = e(t).exp() * (e(1.0) - e(t)).exp_m1();
                (alpha, alpha_bar, rho2, rho_bar2)
            }
        }
    }
}

/// (η₀, η₁) of the I2SB symmetric schedule.
pub fn i2sb_etas(beta0: f64, beta1: f64) -> (f64, f64) {
    let (s0, s1) = (beta0.sqrt(), beta1.sqrt());
    (0.5 * (s1 - s0), 0.5 * (s1 + s0))
}

/// ∫₀ᵗ (η₁ - η₀|2τ-1|)² dτ, expanded to avoid cancellation when η₀ is small.
fn i2sb_rho2(eta0: f64, eta1: f64, t: f64) -> f64 {
    let a = eta1 - eta0;
    let first = |u: f64| u * (a * a + 2.0 * a * eta0 * u + 4.0 / 3.0 * eta0 * eta0 * u * u);
    if t <= 0.5 {
        first(t)
    } else {
        let w = t - 0.5;
        first(0.5) + w * (eta1 * eta1 - 2.0 * eta1 * eta0 * w + 4.0 / 3.0 * eta0 * eta0 * w * w)
    }
}

pub type RateFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// User-supplied `f` and `g²` with a cached integral table.
pub struct CustomSchedule {
    drift: RateFn,
    diffusion2: RateFn,
    horizon: f64,
    log_alpha: HermiteTable,
    rho2: HermiteTable,
}

impl fmt::Debug for CustomSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomSchedule")
            .field("horizon", &self.horizon)
            .field("rho_terminal2", &self.rho2.last())
            .finish()
    }
}

impl CustomSchedule {
    fn build(drift: RateFn, diffusion2: RateFn, horizon: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidSchedule(format!("horizon must be positive, got {horizon}")));
        }
        let check = |t: f64, v: f64| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFiniteIntegrand { t })
            }
        };
        let rule = GaussRule::new(CUSTOM_RULE_POINTS);
        let n = CUSTOM_KNOTS;
        let h = horizon / (n - 1) as f64;
        let knot = |k: usize| if k == n - 1 { horizon } else { k as f64 * h };

        let mut log_alpha = vec![0.0; n];
        let mut rho2 = vec![0.0; n];
        let mut d_log_alpha = vec![0.0; n];
        let mut d_rho2 = vec![0.0; n];
        for k in 0..n {
            let t = knot(k);
            let f = check(t, drift(t))?;
            let g2 = check(t, diffusion2(t))?;
            if g2 < 0.0 {
                return Err(Error::InvalidSchedule(format!("g² negative at t = {t}")));
            }
            d_log_alpha[k] = f;
            if k > 0 {
                let (a, b) = (knot(k - 1), t);
                let mut inner = Ok(0.0);
                let base = log_alpha[k - 1];
                let panel_rho = rule.integrate(a, b, |tau| {
                    // log α at the node, integrated from the panel start
                    let la = base + rule.integrate(a, tau, |s| drift(s));
                    let v = diffusion2(tau) * (-2.0 * la).exp();
                    if !v.is_finite() {
                        inner = Err(Error::NonFiniteIntegrand { t: tau });
                    }
                    v
                });
                inner?;
                log_alpha[k] = base + rule.integrate(a, b, |s| drift(s));
                rho2[k] = rho2[k - 1] + panel_rho;
                check(t, log_alpha[k])?;
                check(t, rho2[k])?;
            }
            d_rho2[k] = g2 * (-2.0 * log_alpha[k]).exp();
        }
        if rho2[n - 1] <= 0.0 {
            return Err(Error::InvalidSchedule("ρ_T² must be positive".into()));
        }
        Ok(Self {
            log_alpha: HermiteTable::new(0.0, h, log_alpha, d_log_alpha, false),
            rho2: HermiteTable::new(0.0, h, rho2, d_rho2, true),
            drift,
            diffusion2,
            horizon,
        })
    }
}

#[derive(Debug, Clone)]
enum Kind {
    Preset(Preset),
    Custom(Arc<CustomSchedule>),
}

/// A noise schedule on `[0, T]`. Cheap to clone and safe to share.
#[derive(Debug, Clone)]
pub struct ScheduleSpec {
    kind: Kind,
}

/// Schedule quantities at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleEval {
    pub t: f64,
    /// drift rate f(t)
    pub f: f64,
    /// diffusion rate g²(t)
    pub g2: f64,
    pub alpha: f64,
    pub alpha_bar: f64,
    pub rho2: f64,
    pub rho_bar2: f64,
    /// σ_t = α_t ρ_t
    pub sigma: f64,
}

impl ScheduleEval {
    pub fn rho(&self) -> f64 {
        self.rho2.sqrt()
    }

    pub fn rho_bar(&self) -> f64 {
        self.rho_bar2.sqrt()
    }
}

/// Pinned-bridge Gaussian coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeCoeffs {
    /// coefficient of x_T
    pub a: f64,
    /// coefficient of x₀
    pub b: f64,
    /// standard deviation
    pub c: f64,
}

impl BridgeCoeffs {
    pub fn variance(&self) -> f64 {
        self.c * self.c
    }
}

impl From<Preset> for ScheduleSpec {
    fn from(p: Preset) -> Self {
        ScheduleSpec { kind: Kind::Preset(p) }
    }
}

impl ScheduleSpec {
    pub fn preset(p: Preset) -> Result<Self> {
        p.validate()?;
        Ok(p.into())
    }

    pub fn from_id(id: &str) -> Result<Self> {
        Self::preset(Preset::from_id(id)?)
    }

    pub fn brownian(sigma: f64) -> Result<Self> {
        Self::preset(Preset::BrownianBridge { sigma })
    }

    pub fn i2sb(beta0: f64, beta1: f64) -> Result<Self> {
        Self::preset(Preset::I2sb { beta0, beta1 })
    }

    pub fn ddbm_vp(beta0: f64) -> Result<Self> {
        Self::preset(Preset::DdbmVp { beta0 })
    }

    pub fn ddbm_ve(horizon: f64) -> Result<Self> {
        Self::preset(Preset::DdbmVe { horizon })
    }

    pub fn bridge_tts_gmax(beta0: f64, beta_d: f64) -> Result<Self> {
        Self::preset(Preset::BridgeTtsGmax { beta0, beta_d })
    }

    pub fn bridge_tts_vp(beta0: f64, beta_d: f64) -> Result<Self> {
        Self::preset(Preset::BridgeTtsVp { beta0, beta_d })
    }

    /// Arbitrary linear-drift schedule given `f` and `g²`.
    pub fn custom(
        drift: impl Fn(f64) -> f64 + Send + Sync + 'static,
        diffusion2: impl Fn(f64) -> f64 + Send + Sync + 'static,
        horizon: f64,
    ) -> Result<Self> {
        let c = CustomSchedule::build(Arc::new(drift), Arc::new(diffusion2), horizon)?;
        Ok(ScheduleSpec { kind: Kind::Custom(Arc::new(c)) })
    }

    /// The preset parameters, or `None` for custom schedules.
    pub fn as_preset(&self) -> Option<Preset> {
        match &self.kind {
            Kind::Preset(p) => Some(*p),
            Kind::Custom(_) => None,
        }
    }

    pub fn id(&self) -> &'static str {
        match &self.kind {
            Kind::Preset(p) => p.id(),
            Kind::Custom(_) => "custom",
        }
    }

    pub fn horizon(&self) -> f64 {
        match &self.kind {
            Kind::Preset(p) => p.horizon(),
            Kind::Custom(c) => c.horizon,
        }
    }

    /// Default (ε, γ): 1e-4·T and 1e-3·T.
    pub fn default_window(&self) -> (f64, f64) {
        let t = self.horizon();
        (1e-4 * t, 1e-3 * t)
    }

    /// Checks `t` against `[0, T]`, snapping float drift onto the boundary.
    pub fn check_time(&self, t: f64) -> Result<f64> {
        let horizon = self.horizon();
        let slack = BOUNDARY_SNAP * horizon.max(1.0);
        if !t.is_finite() || t < -slack || t > horizon + slack {
            return Err(Error::TimeOutOfRange { t, horizon });
        }
        Ok(t.clamp(0.0, horizon))
    }

    pub fn drift(&self, t: f64) -> f64 {
        match &self.kind {
            Kind::Preset(p) => p.drift(t),
            Kind::Custom(c) => (c.drift)(t),
        }
    }

    pub fn diffusion2(&self, t: f64) -> f64 {
        match &self.kind {
            Kind::Preset(p) => p.diffusion2(t),
            Kind::Custom(c) => (c.diffusion2)(t),
        }
    }

    pub fn eval(&self, t: f64) -> Result<ScheduleEval> {
        let t = self.check_time(t)?;
        let (alpha, alpha_bar, rho2, rho_bar2) = match &self.kind {
            Kind::Preset(p) => p.closed_form(t),
            Kind::Custom(c) => {
                let log_alpha = c.log_alpha.eval(t);
                let log_alpha_t = c.log_alpha.last();
                let rho2 = c.rho2.eval(t).max(0.0);
                let rho_t2 = c.rho2.last();
                let rho_bar2 = if t == c.horizon { 0.0 } else { (rho_t2 - rho2).max(0.0) };
                (log_alpha.exp(), (log_alpha - log_alpha_t).exp(), rho2, rho_bar2)
            }
        };
        let f = self.drift(t);
        let g2 = self.diffusion2(t);
        if !(alpha.is_finite() && rho2.is_finite() && rho_bar2.is_finite() && f.is_finite() && g2.is_finite()) {
            return Err(Error::NonFiniteIntegrand { t });
        }
        Ok(ScheduleEval {
            t,
            f,
            g2,
            alpha,
            alpha_bar,
            rho2,
            rho_bar2,
            sigma: alpha * rho2.sqrt(),
        })
    }

    /// ρ_T².
    pub fn rho_terminal2(&self) -> f64 {
        match &self.kind {
            Kind::Preset(p) => p.closed_form(p.horizon()).2,
            Kind::Custom(c) => c.rho2.last(),
        }
    }

    /// α_T.
    pub fn alpha_terminal(&self) -> f64 {
        match &self.kind {
            Kind::Preset(p) => p.closed_form(p.horizon()).0,
            Kind::Custom(c) => c.log_alpha.last().exp(),
        }
    }

    pub fn bridge_coeffs(&self, t: f64) -> Result<BridgeCoeffs> {
        let e = self.eval(t)?;
        Ok(self.coeffs_from_eval(&e))
    }

    pub fn coeffs_from_eval(&self, e: &ScheduleEval) -> BridgeCoeffs {
        let rho_t2 = self.rho_terminal2();
        let a = e.alpha_bar * e.rho2 / rho_t2;
        let b = e.alpha * e.rho_bar2 / rho_t2;
        let mut c = e.alpha * (e.rho_bar2 * e.rho2 / rho_t2).sqrt();
        if c < 1e-15 {
            c = 0.0;
        }
        BridgeCoeffs { a, b, c }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn brownian_at_half() {
        let s = ScheduleSpec::brownian(1.0).unwrap();
        let e = s.eval(0.5).unwrap();
        assert_eq!((e.alpha, e.alpha_bar, e.rho2, e.rho_bar2), (1.0, 1.0, 0.5, 0.5));
        let c = s.bridge_coeffs(0.5).unwrap();
        assert_eq!((c.a, c.b, c.c), (0.5, 0.5, 0.5));
    }

    #[test]
    fn ve_at_zero_and_midpoint() {
        let s = ScheduleSpec::ddbm_ve(80.0).unwrap();
        let e = s.eval(0.0).unwrap();
        assert_eq!((e.alpha, e.rho2, e.rho_bar2), (1.0, 0.0, 6400.0));
        let c = s.bridge_coeffs(40.0).unwrap();
        assert_eq!(c.a, 0.25);
        assert_eq!(c.b, 0.75);
        assert!(close(c.variance(), 1200.0, 1e-12));
    }

    #[test]
    fn endpoints_are_pinned_for_every_preset() {
        for p in Preset::all_defaults() {
            let s = ScheduleSpec::preset(p).unwrap();
            let c0 = s.bridge_coeffs(0.0).unwrap();
            assert_eq!((c0.a, c0.b, c0.c), (0.0, 1.0, 0.0), "{p:?}");
            let c1 = s.bridge_coeffs(s.horizon()).unwrap();
            assert!((c1.a - 1.0).abs() < 1e-12 && c1.b.abs() < 1e-12 && c1.c == 0.0, "{p:?} {c1:?}");
        }
    }

    #[test]
    fn time_range_is_enforced_with_snapping() {
        let s = ScheduleSpec::brownian(1.0).unwrap();
        assert_eq!(s.eval(1.0 + 1e-13).unwrap().t, 1.0);
        assert_eq!(s.eval(-1e-13).unwrap().t, 0.0);
        assert!(matches!(s.eval(1.001), Err(Error::TimeOutOfRange { .. })));
        assert!(matches!(s.eval(f64::NAN), Err(Error::TimeOutOfRange { .. })));
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(ScheduleSpec::brownian(0.0).is_err());
        assert!(ScheduleSpec::i2sb(0.3, 0.1).is_err());
        assert!(ScheduleSpec::ddbm_ve(-1.0).is_err());
        assert!(Preset::from_id("nope").is_err());
    }

    #[test]
    fn custom_rejects_non_finite_integrand() {
        let r = ScheduleSpec::custom(|_| 0.0, |t| if t > 0.5 { f64::NAN } else { 1.0 }, 1.0);
        assert!(matches!(r, Err(Error::NonFiniteIntegrand { .. })));
    }

    #[test]
    fn custom_matches_brownian_preset() {
        let custom = ScheduleSpec::custom(|_| 0.0, |_| 1.0, 1.0).unwrap();
        let preset = ScheduleSpec::brownian(1.0).unwrap();
        for t in [0.0, 0.123, 0.5, 0.987, 1.0] {
            let (a, b) = (custom.eval(t).unwrap(), preset.eval(t).unwrap());
            assert!((a.rho2 - b.rho2).abs() < 1e-12);
            assert!((a.rho_bar2 - b.rho_bar2).abs() < 1e-12);
        }
    }

    #[test]
    fn preset_ids_round_trip_through_toml() {
        for p in Preset::all_defaults() {
            let text = toml::to_string(&p).unwrap();
            let back: Preset = toml::from_str(&text).unwrap();
            assert_eq!(p, back);
            assert_eq!(Preset::from_id(p.id()).unwrap(), p);
        }
        let p: Preset = toml::from_str("id = \"i2sb\"\nbeta1 = 1.0").unwrap();
        assert_eq!(p, Preset::I2sb { beta0: 0.1, beta1: 1.0 });
    }
}
