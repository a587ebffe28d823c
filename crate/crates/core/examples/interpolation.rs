//! Records noise tapes, replays them, and walks between two samples by
//! spherical interpolation of their noises.

use bridgekit::data::DatasetSpec;
use bridgekit::model::{estimate_endpoint_stats, Model, Precondition, Role, Scheme};
use bridgekit::rng::{self, Domain};
use bridgekit::sample::{cdbm_sample, interpolate, replay, PlanMode, TimestepPlan};
use bridgekit::schedule::ScheduleSpec;
use bridgekit::train::{
    train_loop, DbsmWeighting, LossWeighting, Metric, Objective, TrainSettings, TrainingSchedule, Window,
};

fn main() -> bridgekit::Result<()> {
    let spec = ScheduleSpec::brownian(1.0)?;
    let w = Window::for_spec(&spec);
    let data = DatasetSpec::default();
    let stats = estimate_endpoint_stats(&data.sample_n(0, 4096))?;
    let pre = Precondition::new(Scheme::EdmStyle, Role::Consistency, Some(stats), w.eps)?;
    let mut h = Model::new(spec.clone(), pre, 2, &[64, 64], 0)?;
    let settings = TrainSettings {
        objective: Objective::Cbt,
        steps: 500,
        batch_size: 128,
        lr: 1e-3,
        seed: 0,
        schedule: TrainingSchedule::ConstantGap { dt: 0.2 },
        weighting: LossWeighting::Unit,
        metric: Metric::SquaredL2,
        dbsm_weighting: DbsmWeighting::Unit,
        log_every: 100,
    };
    train_loop(&mut h, None, &data, &settings, &w, None)?;

    let y = data.held_out(0, 1).remove(0).y;
    let plan = TimestepPlan::new(&spec, &w, 2, PlanMode::PinnedSecond { t2: 0.9 })?;
    let (a, tape_a) = cdbm_sample(&h, &spec, &w, &y, &plan, &mut rng::stream(1, Domain::Sampling, 0))?;
    let (b, tape_b) = cdbm_sample(&h, &spec, &w, &y, &plan, &mut rng::stream(2, Domain::Sampling, 0))?;
    assert_eq!(replay(&h, &spec, &w, &tape_a)?, a);
    println!("y = {y:.3?}\nsample a {a:.4?}\nsample b {b:.4?}");
    let weights: Vec<f64> = (0..=8).map(|k| k as f64 / 8.0).collect();
    for (wt, x) in weights.iter().zip(interpolate(&h, &spec, &w, &tape_a, &tape_b, &weights)?) {
        println!("  w = {wt:.3}  x = {x:.4?}");
    }
    Ok(())
}
