//! The ensemble filter on a linear-Gaussian plant approaches the exact
//! Kalman filter as the ensemble grows.

use nalgebra::{DMatrix, DVector};
use seplqg::belief::{BeliefEngine, BeliefFilter, GaussianBelief};
use seplqg::plant::LinearPlant;

fn main() -> seplqg::Result<()> {
    let plant = LinearPlant::lti(
        DMatrix::from_row_slice(2, 2, &[0.95, 0.1, 0.0, 0.9]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        DMatrix::from_element(1, 1, 0.5),
        DMatrix::from_element(1, 1, 0.3),
        20,
        1.0,
    )?;
    let b0 = GaussianBelief::new(DVector::from_vec(vec![1.0, -1.0]), DMatrix::identity(2, 2))?;
    let u = DVector::from_element(1, 0.5);
    let measurements: Vec<DVector<f64>> = (1..=20).map(|k| DVector::from_element(1, (0.4 * k as f64).sin())).collect();

    let run = |engine: BeliefEngine| -> seplqg::Result<GaussianBelief> {
        let filter = BeliefFilter::new(&plant, engine, 42)?;
        let mut state = filter.init(&b0)?;
        for (k, y) in measurements.iter().enumerate() {
            state = filter.update(&filter.predict(&state, k, &u)?, k + 1, y)?;
        }
        state.to_gaussian()
    };

    let exact = run(BeliefEngine::ExactKalman)?;
    println!("exact KF   mean {:>9.5} {:>9.5}   var {:.5} {:.5}", exact.mean()[0], exact.mean()[1], exact.cov()[(0, 0)], exact.cov()[(1, 1)]);
    for members in [10, 100, 1_000, 10_000, 50_000] {
        let ens = run(BeliefEngine::ensemble(members))?;
        let mean_err = (ens.mean() - exact.mean()).amax();
        let cov_err = (ens.cov() - exact.cov()).amax();
        println!("M = {members:>6}  |mean err| {mean_err:.2e}   |cov err| {cov_err:.2e}");
    }
    Ok(())
}
