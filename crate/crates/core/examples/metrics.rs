//! Sliced-W2 and energy distance between point clouds.

use bridgekit::data::DatasetSpec;
use bridgekit::eval::{energy_distance, sliced_wasserstein2};

fn main() -> bridgekit::Result<()> {
    let data = DatasetSpec::default();
    let a: Vec<Vec<f64>> = data.held_out(0, 2000).into_iter().map(|p| p.x).collect();
    let b: Vec<Vec<f64>> = data.held_out(1, 2000).into_iter().map(|p| p.x).collect();
    let shifted: Vec<Vec<f64>> = b.iter().map(|p| vec![p[0] + 0.25, p[1]]).collect();
    println!("same distribution: sw2 {:.4}  energy {:.5}", sliced_wasserstein2(&a, &b, 256, 0)?, energy_distance(&a, &b)?);
    println!(
        "shifted by 0.25:   sw2 {:.4}  energy {:.5}",
        sliced_wasserstein2(&a, &shifted, 256, 0)?,
        energy_distance(&a, &shifted)?
    );
    Ok(())
}
