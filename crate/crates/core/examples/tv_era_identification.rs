//! Identifies a reduced-order time-varying model from impulse responses of a
//! linear time-varying plant and reports the singular-value gap and the
//! reconstruction error.

use nalgebra::{DMatrix, DVector};
use seplqg::plant::{simulate_nominal, LinearPlant};
use seplqg::sysid::{all_pairs, collect_impulse_responses, default_blocks, long_lag_pairs, tv_era, validate_rom};
use seplqg::trajopt::NominalTrajectory;

fn main() -> seplqg::Result<()> {
    let n = 60;
    let a: Vec<_> = (0..n)
        .map(|k| {
            let s = 0.1 * (0.2 * k as f64).sin();
            DMatrix::from_row_slice(3, 3, &[0.8 + s, 0.2, 0.0, -0.1, 0.7, 0.1, 0.05, 0.0, 0.6 - s])
        })
        .collect();
    let b = vec![DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.5, 1.0, 0.0, 0.3]); n];
    let c = vec![DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.5, 0.0, 1.0, -0.4]); n + 1];
    let plant = LinearPlant::time_varying(a, b, c, DMatrix::identity(2, 2), DMatrix::identity(2, 2), n, 1.0)?;

    let x0 = DVector::zeros(3);
    let controls = vec![DVector::zeros(2); n];
    let run = simulate_nominal(&plant, &x0, &controls)?;
    let nominal = NominalTrajectory {
        covs: vec![DMatrix::zeros(3, 3); n + 1],
        means: run.states,
        observations: run.observations,
        controls,
        nominal_cost: 0.0,
        iterations: 0,
        converged: true,
        cost_history: Vec::new(),
    };
    let markov = collect_impulse_responses(&plant, &nominal, 1e-2)?;

    for n_r in [1, 2, 3, 4] {
        let (p, q) = default_blocks(n_r.max(3), 2, 2);
        let rom = tv_era(&markov, n_r, p, q)?;
        let err = validate_rom(&rom, &markov, &all_pairs(&rom))?;
        let holdout = long_lag_pairs(&rom, p + q);
        let held = validate_rom(&rom, &markov, &holdout)?;
        let s = &rom.singular_values[n / 2];
        println!(
            "n_r = {n_r}: Markov error {err:.2e} (held-out {held:.2e} on {} pairs), leading singular values at k={}: {}",
            holdout.len(),
            n / 2,
            s.iter().take(5).map(|v| format!("{v:.2e}")).collect::<Vec<_>>().join(" ")
        );
    }
    Ok(())
}
