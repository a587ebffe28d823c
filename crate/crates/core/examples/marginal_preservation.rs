//! One exact reverse-SDE step away from the pinned point, then the exact
//! probability-flow ODE, keeps the Brownian-bridge marginals. Starting the
//! ODE on the pinned point does not.

use bridgekit::eval::{marginal_preservation_test, StartMode};

fn main() -> bridgekit::Result<()> {
    let grid = [0.8, 0.5, 0.2];
    for mode in [StartMode::SdeSkip { gamma: 0.1 }, StartMode::NoSkip] {
        println!("{mode:?}");
        for r in marginal_preservation_test(mode, &grid, 100_000, -0.5, 1.0, 0)? {
            println!(
                "  s = {:.1}  var {:.4} (exact {:.4})  z_mean {:>8.2}  z_var {:>8.2}",
                r.s, r.var, r.expected_var, r.z_mean, r.z_var
            );
        }
    }
    Ok(())
}
