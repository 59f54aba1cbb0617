mod common;

use common::{exact_model_design, linear_nominal, lq_toy};
use seplqg::belief::BeliefEngine;
use seplqg::harness::*;
use seplqg::plant::Plant;
use seplqg::trajopt::CostSpec;

const N: usize = 30;

fn toy_cost() -> CostSpec {
    CostSpec::isotropic(2, 1, 1.0, 0.5, 0.1, 4.0, 1.0).unwrap()
}

fn mc_opts(n_runs: usize, seed: u64) -> MonteCarloOptions {
    MonteCarloOptions {
        n_runs,
        base_seed: seed,
        probes: vec![0, 1],
        cost: Some(toy_cost()),
    }
}

fn theorem_opts(n_runs: usize, seed: u64) -> Theorem1Options {
    Theorem1Options {
        n_runs,
        base_seed: seed,
        h: 1e-4,
        tracker: BeliefEngine::ExactKalman,
    }
}

#[test]
fn noiseless_runs_track_the_nominal_exactly() {
    let plant = lq_toy(N, 0.0, 0.0);
    let nominal = linear_nominal(&plant, &toy_cost(), 0.0);
    let design = exact_model_design(&plant, 0.0, 0.0, 0.0);
    let report = run_monte_carlo(&plant, &nominal, &design, &mc_opts(8, 1)).unwrap();
    for probe in &report.per_position_errors {
        for series in [&probe.closed_rms, &probe.open_rms, &probe.two_sigma] {
            assert!(series.iter().all(|e| e.abs() <= 1e-12));
        }
    }
    for (mean, x) in report.mean_traj.iter().zip(&nominal.means) {
        assert!((mean - x).amax() <= 1e-12);
    }
}

#[test]
fn zero_noise_gives_zero_cost_variation() {
    // the tracker needs a nonsingular sensor model; 1e-30 is numerically noiseless
    let plant = lq_toy(N, 0.0, 1e-30);
    let nominal = linear_nominal(&plant, &toy_cost(), 0.0);
    let design = exact_model_design(&plant, 0.0, 1e-30, 0.0);
    let res = check_theorem1(&plant, &nominal, &design, &toy_cost(), &theorem_opts(16, 2)).unwrap();
    assert!(res.samples.iter().all(|s| s.abs() <= 1e-9));
}

#[test]
fn monte_carlo_is_reproducible_bit_for_bit() {
    let plant = lq_toy(N, 0.2, 0.1);
    let nominal = linear_nominal(&plant, &toy_cost(), 0.3);
    let design = exact_model_design(&plant, 0.2, 0.1, 0.3);
    let a = run_monte_carlo(&plant, &nominal, &design, &mc_opts(100, 5)).unwrap();
    let b = run_monte_carlo(&plant, &nominal, &design, &mc_opts(100, 5)).unwrap();
    assert_eq!(a.mean_traj, b.mean_traj);
    assert_eq!(a.cost_samples, b.cost_samples);
    assert_eq!(a.per_position_errors[0].closed_rms, b.per_position_errors[0].closed_rms);
    let c = run_monte_carlo(&plant, &nominal, &design, &mc_opts(100, 6)).unwrap();
    assert_ne!(a.cost_samples, c.cost_samples);
}

#[test]
fn paired_runs_share_initial_state_and_noise() {
    let plant = lq_toy(N, 0.2, 0.1);
    let nominal = linear_nominal(&plant, &toy_cost(), 0.3);
    let design = exact_model_design(&plant, 0.2, 0.1, 0.3);
    let closed = simulate_closed_loop(&plant, &nominal, &design, 9, 3).unwrap();
    let open = simulate_open_loop(&plant, &nominal, 9, 3).unwrap();
    assert_eq!(closed.states[0], open.states[0]);
    // first measurement noise is identical, and so is the innovation-free part of step 0
    let c0 = plant.c(0);
    assert!(((&closed.observations[0] - c0 * &closed.states[0]) - (&open.observations[0] - c0 * &open.states[0])).amax() <= 1e-12);
    // the process noise can be recovered from either run and agrees
    let w = |t: &Trajectory, k: usize| {
        let b = plant.b(k);
        let resid = &t.states[k + 1] - plant.a(k) * &t.states[k] - b * &t.controls[k];
        resid[1] / b[(1, 0)]
    };
    for k in 0..N {
        assert!((w(&closed, k) - w(&open, k)).abs() <= 1e-9);
    }
}

#[test]
fn feedback_reduces_error_on_the_matched_linear_plant() {
    let plant = lq_toy(N, 0.2, 0.05);
    let nominal = linear_nominal(&plant, &toy_cost(), 0.3);
    let design = exact_model_design(&plant, 0.2, 0.05, 0.3);
    let report = run_monte_carlo(&plant, &nominal, &design, &mc_opts(500, 3)).unwrap();
    let (closed, open) = report.per_position_errors[0].time_averaged_sq_error();
    assert!(closed < open, "{closed} vs {open}");
    assert_eq!(report.n_failed, 0);
}

#[test]
fn cost_variation_vanishes_in_mean_on_a_linear_plant() {
    let plant = lq_toy(N, 0.2, 0.1);
    let nominal = linear_nominal(&plant, &toy_cost(), 0.3);
    let design = exact_model_design(&plant, 0.2, 0.1, 0.3);
    let res = check_theorem1(&plant, &nominal, &design, &toy_cost(), &theorem_opts(5000, 11)).unwrap();
    assert!(res.standard_error > 0.0);
    assert!(res.mean_delta_j.abs() <= 3.0 * res.standard_error, "{} vs SE {}", res.mean_delta_j, res.standard_error);
    assert!(res.within(3.0, 0.0));
}

#[test]
fn standard_error_halves_when_runs_quadruple() {
    let plant = lq_toy(N, 0.2, 0.1);
    let nominal = linear_nominal(&plant, &toy_cost(), 0.3);
    let design = exact_model_design(&plant, 0.2, 0.1, 0.3);
    let small = check_theorem1(&plant, &nominal, &design, &toy_cost(), &theorem_opts(500, 21)).unwrap();
    let large = check_theorem1(&plant, &nominal, &design, &toy_cost(), &theorem_opts(2000, 21)).unwrap();
    let ratio = small.standard_error / large.standard_error;
    assert!((ratio - 2.0).abs() <= 0.6, "{ratio}");
}

#[test]
fn cost_gradients_of_a_quadratic_are_exact() {
    let plant = lq_toy(N, 0.2, 0.1);
    let nominal = linear_nominal(&plant, &toy_cost(), 0.3);
    let spec = toy_cost();
    let g = cost_gradients(&nominal, &spec, 1e-4).unwrap();
    for k in 0..=N {
        let q = if k < N { 1.0 } else { 4.0 };
        let want = (&nominal.means[k] - spec.target()) * (2.0 * q);
        assert!((&g.mean[k] - want).amax() <= 1e-7);
        assert!((g.trace[k] - 0.5).abs() <= 1e-7);
    }
    for k in 0..N {
        assert!((g.control[k][0] - 0.2 * nominal.controls[k][0]).abs() <= 1e-7);
    }
}

#[test]
fn complexity_accounting_for_a_hundred_node_grid() {
    let r = complexity_report(100, 20).unwrap();
    assert_eq!(r.belief_dim, 10_100);
    assert_eq!(r.ratio, 2.5e5);
    assert_eq!(r.order, 5);
    let text = r.to_string();
    assert!(text.contains("10100 x 10100 vs 20 x 20 Riccati"));
    assert!(!text.contains("no reduction"));
    assert!(complexity_report(10, 20).unwrap().to_string().contains("no reduction in estimator/controller order"));
}

#[test]
fn report_json_carries_the_seed_rule() {
    let plant = lq_toy(N, 0.2, 0.1);
    let nominal = linear_nominal(&plant, &toy_cost(), 0.3);
    let design = exact_model_design(&plant, 0.2, 0.1, 0.3);
    let report = run_monte_carlo(&plant, &nominal, &design, &mc_opts(4, 0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    report.save_json(dir.path().join("r.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    for key in ["mean_traj", "per_position_errors", "seed_rule", "n_runs"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(plant.spec().horizon, N);
}

