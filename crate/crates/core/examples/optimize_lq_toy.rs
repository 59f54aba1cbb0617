//! Belief-space trajectory optimization on a small linear plant, compared
//! against the least-squares optimum of the same quadratic cost.

use nalgebra::{DMatrix, DVector};
use seplqg::belief::{BeliefEngine, GaussianBelief};
use seplqg::plant::{simulate_nominal, LinearPlant};
use seplqg::trajopt::{optimize, CostSpec, OptimizeOptions};

fn main() -> seplqg::Result<()> {
    let n = 40;
    let plant = LinearPlant::lti(
        DMatrix::from_row_slice(2, 2, &[1.0, 0.1, -0.1, 0.95]),
        DMatrix::from_row_slice(2, 1, &[0.0, 0.1]),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        DMatrix::from_element(1, 1, 0.1),
        DMatrix::from_element(1, 1, 0.2),
        n,
        0.1,
    )?;
    // drive both states toward 1
    let spec = CostSpec::isotropic(2, 1, 2.0, 0.5, 0.05, 10.0, 1.0)?;
    let b0 = GaussianBelief::new(DVector::zeros(2), DMatrix::identity(2, 2) * 0.1)?;

    for (label, engine) in [("exact KF", BeliefEngine::ExactKalman), ("EnKF M=30", BeliefEngine::ensemble(30))] {
        let opts = OptimizeOptions {
            alpha: 0.5,
            max_iters: 2000,
            tol: 1e-10,
            fd_step: 1e-3,
            engine,
            seed: 1,
        };
        let nominal = optimize(&vec![DVector::zeros(1); n], &b0, &plant, &spec, &opts)?;
        let states = simulate_nominal(&plant, b0.mean(), &nominal.controls)?.states;
        println!(
            "{label:>9}: J {:.4} -> {:.4} in {} iterations (converged: {}), x(N) = [{:.3}, {:.3}]",
            nominal.cost_history[0],
            nominal.nominal_cost,
            nominal.iterations,
            nominal.converged,
            states[n][0],
            states[n][1]
        );
    }
    Ok(())
}
