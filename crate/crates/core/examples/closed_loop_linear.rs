//! Monte Carlo evaluation of an LQG closed loop on a linear plant: feedback
//! against open-loop replay with identical noise, and the first-order cost
//! variation averaged over runs.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use seplqg::belief::{BeliefEngine, GaussianBelief};
use seplqg::harness::{check_theorem1, run_monte_carlo, MonteCarloOptions, Theorem1Options};
use seplqg::lqg::{LqgDesign, LqgWeights};
use seplqg::plant::{simulate_nominal, LinearPlant};
use seplqg::sysid::LtvRom;
use seplqg::trajopt::{optimize, CostSpec, OptimizeOptions};

fn main() -> seplqg::Result<()> {
    let n = 60;
    let (w, v, p0) = (0.2, 0.05, 0.3);
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, -0.1, 0.97]);
    let b = DMatrix::from_row_slice(2, 1, &[0.0, 0.1]);
    let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    let plant = LinearPlant::lti(a.clone(), b.clone(), c.clone(), DMatrix::from_element(1, 1, w), DMatrix::from_element(1, 1, v), n, 0.1)?;
    let spec = CostSpec::isotropic(2, 1, 1.0, 0.5, 0.05, 5.0, 1.0)?;
    let b0 = GaussianBelief::new(DVector::zeros(2), DMatrix::identity(2, 2) * p0)?;

    let opts = OptimizeOptions { alpha: 0.05, max_iters: 300, tol: 1e-9, engine: BeliefEngine::ExactKalman, ..Default::default() };
    let mut nominal = optimize(&vec![DVector::zeros(1); n], &b0, &plant, &spec, &opts)?;
    // the controller compares measurements against the noiseless outputs
    nominal.observations = simulate_nominal(&plant, b0.mean(), &nominal.controls)?.observations;

    let rom = LtvRom::from_matrices(vec![a; n], vec![b; n], vec![c; n + 1])?;
    let weights = LqgWeights { w_var: w, v_var: v, p0_var: p0, ..Default::default() };
    let design = Arc::new(LqgDesign::new(rom, weights)?);

    let mc = MonteCarloOptions { n_runs: 2000, base_seed: 7, probes: vec![0, 1], cost: Some(spec.clone()) };
    let report = run_monte_carlo(&plant, &nominal, &design, &mc)?;
    for probe in &report.per_position_errors {
        let (closed, open) = probe.time_averaged_sq_error();
        println!("state {}: time-averaged squared error closed {closed:.5}, open {open:.5}", probe.index);
    }
    let mean_cost = report.cost_samples.iter().sum::<f64>() / report.cost_samples.len() as f64;
    println!("mean realized cost {mean_cost:.4} vs nominal belief cost {:.4}", nominal.nominal_cost);

    let t1 = check_theorem1(
        &plant,
        &nominal,
        &design,
        &spec,
        &Theorem1Options { n_runs: 5000, base_seed: 9, h: 1e-4, tracker: BeliefEngine::ExactKalman },
    )?;
    println!(
        "first-order cost variation: mean {:.3e}, SE {:.3e} ({:.2} SE)",
        t1.mean_delta_j,
        t1.standard_error,
        t1.mean_delta_j.abs() / t1.standard_error
    );
    Ok(())
}
