//! Global error of the exponential integrator and of Euler on a Gaussian
//! coupling whose probability-flow ODE is known exactly.

use bridgekit::eval::{convergence_order, OracleProblem};
use bridgekit::solver::OdeSolver;

fn main() -> bridgekit::Result<()> {
    let problem = OracleProblem::brownian_default();
    let steps = [8, 16, 32, 64, 128, 256, 512];
    for solver in [OdeSolver::Ei, OdeSolver::Euler] {
        let r = convergence_order(solver, &problem, &steps)?;
        println!("{solver:?}: fitted order {:.3}", r.slope);
        for (n, e) in r.steps.iter().zip(&r.errors) {
            println!("  N = {n:>4}  error = {e:.3e}");
        }
    }
    let exact = problem.exact()?;
    let fine = problem.solve(OdeSolver::Ei, 1 << 14)?;
    println!("quantile map {exact:.5?}\nEI, 2^14 steps {fine:.5?}");
    Ok(())
}
