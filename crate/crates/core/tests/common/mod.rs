#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

use seplqg::belief::{BeliefEngine, GaussianBelief};
use seplqg::lqg::{LqgDesign, LqgWeights};
use seplqg::plant::{simulate_nominal, LinearPlant, Plant};
use seplqg::sysid::LtvRom;
use seplqg::trajopt::{nominal_cost, rollout_belief, CostSpec, NominalTrajectory};

pub fn mat(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, data)
}

pub fn scalar(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

/// Stable order-3 system with two outputs and two inputs.
pub fn order3() -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let a = mat(3, 3, &[0.9, 0.2, 0.0, -0.1, 0.8, 0.1, 0.0, 0.05, 0.7]);
    let b = mat(3, 2, &[1.0, 0.0, 0.5, 1.0, 0.0, 0.3]);
    let c = mat(2, 3, &[1.0, 0.0, 0.5, 0.0, 1.0, -0.4]);
    (a, b, c)
}

/// Two-state LQ toy: lightly damped oscillator, one input, one output.
pub fn lq_toy(horizon: usize, w: f64, v: f64) -> LinearPlant {
    LinearPlant::lti(
        mat(2, 2, &[1.0, 0.1, -0.1, 0.95]),
        mat(2, 1, &[0.0, 0.1]),
        mat(1, 2, &[1.0, 0.0]),
        scalar(w),
        scalar(v),
        horizon,
        0.1,
    )
    .unwrap()
}

/// `C A^(k-j-1) B` by repeated multiplication.
pub fn matrix_power_markov(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, k: usize, j: usize) -> DMatrix<f64> {
    let mut m = b.clone();
    for _ in 0..k - j - 1 {
        m = a * m;
    }
    c * m
}

/// Free response and input-to-state map of an LTI system: `x_k = F_k x0 + G_k U`.
pub fn stacked_response(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    horizon: usize,
) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let (n, m) = (a.nrows(), b.ncols());
    let mut free = vec![DMatrix::identity(n, n)];
    let mut forced = vec![DMatrix::zeros(n, m * horizon)];
    for k in 0..horizon {
        free.push(a * &free[k]);
        let mut g = a * &forced[k];
        g.view_mut((0, k * m), (n, m)).copy_from(b);
        forced.push(g);
    }
    (free, forced)
}

pub fn flatten(controls: &[DVector<f64>]) -> DVector<f64> {
    DVector::from_iterator(
        controls.iter().map(|u| u.len()).sum(),
        controls.iter().flat_map(|u| u.iter().copied()),
    )
}

/// Horizon of the LQ toy used by the optimizer oracles.
pub const TOY_N: usize = 20;

pub fn toy_spec() -> CostSpec {
    CostSpec::new(
        DMatrix::identity(2, 2) * 2.0,
        0.7,
        DMatrix::identity(1, 1) * 0.05,
        DMatrix::identity(2, 2) * 5.0,
        DVector::from_vec(vec![1.0, 0.0]),
    )
    .unwrap()
}

pub fn toy_b0() -> GaussianBelief {
    GaussianBelief::new(DVector::from_vec(vec![0.2, -0.1]), DMatrix::identity(2, 2) * 0.5).unwrap()
}

/// With an exact filter fed noiseless measurements the belief mean is the
/// noiseless state `F_k x0 + G_k U` and the covariance does not depend on U,
/// so the toy cost is an explicit quadratic in U. Returns its Hessian `H` and
/// linear term `g` so that `J(U) = U'HU/2 + g'U + const`.
pub fn toy_quadratic() -> (DMatrix<f64>, DVector<f64>) {
    let plant = lq_toy(TOY_N, 0.1, 0.2);
    let spec = toy_spec();
    let (free, forced) = stacked_response(plant.a(0), plant.b(0), TOY_N);
    let x0 = toy_b0().mean().clone();
    let mut h = DMatrix::zeros(TOY_N, TOY_N);
    let mut g = DVector::zeros(TOY_N);
    for k in 0..=TOY_N {
        let q = if k < TOY_N { spec.q_mean() } else { spec.q_terminal() };
        let offset = &free[k] * &x0 - spec.target();
        h += forced[k].transpose() * q * &forced[k] * 2.0;
        g += forced[k].transpose() * q * offset * 2.0;
    }
    h += DMatrix::identity(TOY_N, TOY_N) * 2.0 * spec.r_u()[(0, 0)];
    (h, g)
}

pub fn controls_from(v: &DVector<f64>) -> Vec<DVector<f64>> {
    v.iter().map(|x| DVector::from_element(1, *x)).collect()
}

/// Nominal of a linear plant under a fixed cosine control, beliefs from the exact filter.
pub fn linear_nominal(plant: &LinearPlant, cost: &CostSpec, p0: f64) -> NominalTrajectory {
    let n = plant.spec().horizon;
    let b0 = GaussianBelief::new(DVector::from_vec(vec![0.5, 0.0]), DMatrix::identity(2, 2) * p0).unwrap();
    let controls: Vec<DVector<f64>> = (0..n).map(|k| DVector::from_element(1, (0.3 * k as f64).cos())).collect();
    // a zero sensor variance would make the exact filter's innovation covariance singular
    let noiseless_sensor = plant.spec().measurement_noise[(0, 0)] == 0.0;
    let filter_plant = if noiseless_sensor {
        plant.with_noise(plant.spec().process_noise.clone(), DMatrix::identity(1, 1)).unwrap()
    } else {
        plant.clone()
    };
    let beliefs = rollout_belief(&controls, &b0, &filter_plant, BeliefEngine::ExactKalman, 0).unwrap();
    let observations = simulate_nominal(plant, b0.mean(), &controls).unwrap().observations;
    NominalTrajectory {
        nominal_cost: nominal_cost(&beliefs, &controls, cost).unwrap(),
        means: beliefs.iter().map(|b| b.mean().clone()).collect(),
        covs: beliefs.iter().map(|b| b.cov().clone()).collect(),
        observations,
        controls,
        iterations: 0,
        converged: true,
        cost_history: Vec::new(),
    }
}

/// LQG designed on the exact linear model, noise weights matched to the plant.
pub fn exact_model_design(plant: &LinearPlant, w: f64, v: f64, p0: f64) -> Arc<LqgDesign> {
    let n = plant.spec().horizon;
    let rom = LtvRom::from_matrices(
        (0..n).map(|k| plant.a(k).clone()).collect(),
        (0..n).map(|k| plant.b(k).clone()).collect(),
        (0..=n).map(|k| plant.c(k).clone()).collect(),
    )
    .unwrap();
    let weights = LqgWeights {
        w_var: w.max(1e-12),
        v_var: v.max(1e-12),
        p0_var: p0.max(1e-12),
        ..Default::default()
    };
    Arc::new(LqgDesign::new(rom, weights).unwrap())
}
