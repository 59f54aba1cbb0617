//! Regulator and estimator gains of a time-varying LQG design on a small
//! model, plus the scalar recursions that can be checked by hand.

use nalgebra::DMatrix;
use seplqg::lqg::{kf_forward, lqr_backward, LqgDesign, LqgWeights};
use seplqg::sysid::LtvRom;

fn scalar(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

fn main() -> seplqg::Result<()> {
    // one step of A = B = C = Q = R = S_N = 1: L = 0.5, S_0 = 1.5
    let unit = LtvRom::from_matrices(vec![scalar(1.0)], vec![scalar(1.0)], vec![scalar(1.0); 2])?;
    let lqr = lqr_backward(&unit, &[scalar(1.0)], &scalar(1.0), &[scalar(1.0)])?;
    println!("scalar LQR: L_0 = {}, S_0 = {}", lqr.gains[0][(0, 0)], lqr.riccati[0][(0, 0)]);

    let long = LtvRom::from_matrices(vec![scalar(0.9); 200], vec![scalar(1.0); 200], vec![scalar(1.0); 201])?;
    let kf = kf_forward(&long, &scalar(0.5), &scalar(2.0), &scalar(1.0))?;
    println!("scalar KF: P_pred settles at {:.10}, gain {:.10}", kf.predicted[200][(0, 0)], kf.gains[200][(0, 0)]);

    let n = 50;
    let a: Vec<_> = (0..n)
        .map(|k| DMatrix::from_row_slice(2, 2, &[1.0, 0.1, -0.1 * (1.0 + 0.01 * k as f64), 0.98]))
        .collect();
    let rom = LtvRom::from_matrices(
        a,
        vec![DMatrix::from_row_slice(2, 1, &[0.0, 0.1]); n],
        vec![DMatrix::from_row_slice(1, 2, &[1.0, 0.0]); n + 1],
    )?;
    let design = LqgDesign::new(rom, LqgWeights::default())?;
    let ((sr, sc), (pr, pc)) = design.riccati_dims();
    println!("design: regulator Riccati {sr}x{sc}, estimator Riccati {pr}x{pc}");
    println!("{:>4} {:>10} {:>10} {:>10} {:>10}", "k", "|L_k|", "|K_k|", "tr S_k", "tr P_k");
    for k in (0..n).step_by(10) {
        println!(
            "{k:>4} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
            design.l_gains[k].norm(),
            design.k_gains[k].norm(),
            design.riccati[k].trace(),
            design.filter_cov[k].trace()
        );
    }
    Ok(())
}
