//! Distillation against the closed-form teacher versus teacher-free training,
//! evaluated on the same batch and noise for shrinking gaps.

use bridgekit::data::DatasetSpec;
use bridgekit::eval::loss_gap_ladder;
use bridgekit::model::{estimate_endpoint_stats, Model, Precondition, Role, Scheme};
use bridgekit::schedule::ScheduleSpec;
use bridgekit::train::Window;

fn main() -> bridgekit::Result<()> {
    let spec = ScheduleSpec::brownian(1.0)?;
    let data = DatasetSpec::Gauss1d { mu0: 0.3, s0: 0.5, y_mean: 0.0, y_std: 1.0 };
    let stats = estimate_endpoint_stats(&data.sample_n(0, 10_000))?;
    let eps = Window::for_spec(&spec).eps;
    let pre = Precondition::new(Scheme::EdmStyle, Role::Consistency, Some(stats), eps)?;
    let h = Model::new(spec.clone(), pre, 1, &[64, 64, 64], 0)?;
    println!("{:>6} {:>10} {:>10} {:>10} {:>10}", "dt", "L_cbd", "L_cbt", "gap", "gap/dt");
    for r in loss_gap_ladder(&spec, &data, &h, &[0.2, 0.1, 0.05, 0.025], 10_000, 0)? {
        println!("{:>6} {:>10.5} {:>10.5} {:>10.6} {:>10.5}", r.dt, r.l_cbd, r.l_cbt, r.gap, r.ratio);
    }
    Ok(())
}
