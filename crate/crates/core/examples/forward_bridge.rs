//! Simulates the forward bridge SDE and compares path moments with the
//! closed-form pinned marginal.

use bridgekit::bridge::{simulate_forward_moments, Coupling};
use bridgekit::schedule::ScheduleSpec;

fn main() -> bridgekit::Result<()> {
    let spec = ScheduleSpec::from_id("ddbm-ve")?;
    let pair = Coupling::new(vec![1.0], vec![-1.0])?;
    let rows = simulate_forward_moments(&spec, &pair, 1000, None, 10_000, 0)?;
    println!("{:>8} {:>10} {:>10} {:>10} {:>10}", "t", "mean", "exact", "var", "exact");
    for row in rows.iter().step_by(200) {
        let k = spec.bridge_coeffs(row.t)?;
        let mean = k.a * pair.y[0] + k.b * pair.x[0];
        println!("{:>8.3} {:>10.4} {:>10.4} {:>10.3} {:>10.3}", row.t, row.mean[0], mean, row.var[0], k.variance());
    }
    Ok(())
}
