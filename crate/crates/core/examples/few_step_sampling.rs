//! Pretrains a data predictor, fine-tunes it into consistency functions with
//! and without a teacher, and compares samplers by sliced-W2.
//!
//! Pass `--quick` for a short run.

use bridgekit::verify::{judge_toy, ToyBenchmark};

fn main() -> bridgekit::Result<()> {
    let mut bench = ToyBenchmark::default();
    if std::env::args().any(|a| a == "--quick") {
        bench.dbsm_steps = 500;
        bench.consistency_steps = 300;
    }
    let scores = bench.run()?;
    println!("{:<8} {:>4} {:>10} {:>10}", "sampler", "nfe", "sliced-W2", "energy");
    for s in scores.compared().into_iter().chain(&scores.cbt_ladder) {
        println!("{:<8} {:>4} {:>10.4} {:>10.5}", s.sampler, s.nfe, s.sliced_w2, s.energy);
    }
    let (passed, detail) = judge_toy(&scores);
    println!("{}: {detail}", if passed { "pass" } else { "fail" });
    Ok(())
}
