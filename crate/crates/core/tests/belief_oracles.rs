mod common;

use common::{mat, scalar};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use seplqg::belief::*;
use seplqg::plant::{LinearPlant, Plant};

/// Kalman filter written directly from the textbook equations.
fn textbook_kf(
    plant: &LinearPlant,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    k: usize,
    u: &DVector<f64>,
    y: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let (a, b, c) = (plant.a(k), plant.b(k), plant.c(k + 1));
    let w = &plant.spec().process_noise;
    let v = &plant.spec().measurement_noise;
    let m = a * mean + b * u;
    let p = a * cov * a.transpose() + b * w * b.transpose();
    let s = c * &p * c.transpose() + v;
    let gain = &p * c.transpose() * s.try_inverse().unwrap();
    let m = &m + &gain * (y - c * &m);
    let p = (DMatrix::identity(p.nrows(), p.nrows()) - &gain * c) * p;
    (m, p)
}

fn two_state_plant() -> LinearPlant {
    LinearPlant::lti(
        mat(2, 2, &[0.95, 0.1, 0.0, 0.9]),
        mat(2, 1, &[0.0, 1.0]),
        mat(1, 2, &[1.0, 0.0]),
        scalar(0.5),
        scalar(0.3),
        10,
        1.0,
    )
    .unwrap()
}

#[test]
fn exact_engine_reproduces_textbook_filter() {
    let plant = two_state_plant();
    let filter = BeliefFilter::new(&plant, BeliefEngine::ExactKalman, 0).unwrap();
    let b0 = GaussianBelief::new(DVector::from_vec(vec![1.0, -1.0]), DMatrix::identity(2, 2)).unwrap();
    let mut state = filter.init(&b0).unwrap();
    let (mut m, mut p) = (b0.mean().clone(), b0.cov().clone());
    for k in 0..8 {
        let u = DVector::from_element(1, 0.3 * k as f64);
        let y = DVector::from_element(1, (k as f64).cos());
        state = filter.update(&filter.predict(&state, k, &u).unwrap(), k + 1, &y).unwrap();
        (m, p) = textbook_kf(&plant, &m, &p, k, &u, &y);
        let g = state.to_gaussian().unwrap();
        assert!((g.mean() - &m).amax() < 1e-12);
        assert!((g.cov() - &p).amax() < 1e-12);
    }
}

#[test]
fn large_ensemble_matches_exact_filter_within_three_standard_errors() {
    let plant = two_state_plant();
    let members = 20_000;
    let b0 = GaussianBelief::new(DVector::from_vec(vec![1.0, -1.0]), DMatrix::identity(2, 2)).unwrap();
    let exact = BeliefFilter::new(&plant, BeliefEngine::ExactKalman, 0).unwrap();
    let ens = BeliefFilter::new(&plant, BeliefEngine::ensemble(members), 7).unwrap();
    let (mut se, mut sk) = (ens.init(&b0).unwrap(), exact.init(&b0).unwrap());
    for k in 0..6 {
        let u = DVector::from_element(1, 0.5);
        let y = DVector::from_element(1, 1.0 + 0.2 * k as f64);
        se = ens.update(&ens.predict(&se, k, &u).unwrap(), k + 1, &y).unwrap();
        sk = exact.update(&exact.predict(&sk, k, &u).unwrap(), k + 1, &y).unwrap();
        let (ge, gk) = (se.to_gaussian().unwrap(), sk.to_gaussian().unwrap());
        for i in 0..2 {
            let se_mean = (gk.cov()[(i, i)] / members as f64).sqrt();
            let err = (ge.mean()[i] - gk.mean()[i]).abs();
            assert!(err <= 3.0 * se_mean, "step {k} mean[{i}]: {err} > 3·{se_mean}");
            // sample variance SE for a Gaussian: σ²·sqrt(2/(M-1))
            let se_var = gk.cov()[(i, i)] * (2.0 / (members as f64 - 1.0)).sqrt();
            let err = (ge.cov()[(i, i)] - gk.cov()[(i, i)]).abs();
            assert!(err <= 3.0 * se_var, "step {k} var[{i}]: {err} > 3·{se_var}");
        }
    }
}

#[test]
fn ensemble_rollout_is_reproducible_from_its_seed() {
    let plant = two_state_plant();
    let b0 = GaussianBelief::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
    let run = |seed| {
        let f = BeliefFilter::new(&plant, BeliefEngine::ensemble(30), seed).unwrap();
        let mut s = f.init(&b0).unwrap();
        for k in 0..5 {
            s = f.update(&f.predict(&s, k, &DVector::zeros(1)).unwrap(), k + 1, &DVector::zeros(1)).unwrap();
        }
        s.mean()
    };
    assert_eq!(run(3), run(3));
    assert_ne!(run(3), run(4));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ensemble_covariance_stays_symmetric_psd(
        seed in 0u64..1000,
        w in 0.0f64..2.0,
        v in 0.01f64..2.0,
        y in -5.0f64..5.0,
    ) {
        let plant = two_state_plant().with_noise(scalar(w), scalar(v)).unwrap();
        let b0 = GaussianBelief::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let f = BeliefFilter::new(&plant, BeliefEngine::ensemble(12), seed).unwrap();
        let mut s = f.init(&b0).unwrap();
        for k in 0..4 {
            s = f.update(&f.predict(&s, k, &DVector::from_element(1, 1.0)).unwrap(), k + 1, &DVector::from_element(1, y)).unwrap();
            let g = s.to_gaussian().unwrap();
            prop_assert!(seplqg::linalg::max_asymmetry(g.cov()) < 1e-12);
            prop_assert!(seplqg::linalg::min_eigenvalue(g.cov()) >= -1e-8);
        }
    }

    #[test]
    fn exact_update_never_increases_variance(
        p in 0.01f64..10.0,
        v in 0.01f64..10.0,
        y in -5.0f64..5.0,
    ) {
        let plant = LinearPlant::lti(scalar(1.0), scalar(1.0), scalar(1.0), scalar(0.0), scalar(v), 3, 1.0).unwrap();
        let f = BeliefFilter::new(&plant, BeliefEngine::ExactKalman, 0).unwrap();
        let s = f.init(&GaussianBelief::new(DVector::zeros(1), scalar(p)).unwrap()).unwrap();
        let post = f.update(&s, 0, &DVector::from_element(1, y)).unwrap();
        prop_assert!(post.cov_trace() <= p + 1e-12);
        prop_assert!((post.cov_trace() - p * v / (p + v)).abs() < 1e-10);
    }
}
