//! Bridge coefficients of every preset, and a custom schedule built from its
//! drift and diffusion rates.

use bridgekit::schedule::{Preset, ScheduleSpec};

fn main() -> bridgekit::Result<()> {
    for p in Preset::all_defaults() {
        let spec = ScheduleSpec::preset(p)?;
        println!("{} (T = {}):", p.id(), spec.horizon());
        for frac in [0.1, 0.5, 0.9] {
            let t = frac * spec.horizon();
            let k = spec.bridge_coeffs(t)?;
            println!("  t = {t:>6.2}  a = {:.4}  b = {:.4}  c = {:.4}", k.a, k.b, k.c);
        }
    }

    // linear-beta variance-preserving drift with unit-scale noise
    let custom = ScheduleSpec::custom(|t| -0.5 * (0.1 + 2.0 * t), |t| 0.1 + 2.0 * t, 1.0)?;
    let e = custom.eval(0.5)?;
    println!("custom at t = 0.5: alpha = {:.6}, rho2 = {:.6}, rho_bar2 = {:.6}", e.alpha, e.rho2, e.rho_bar2);
    Ok(())
}
