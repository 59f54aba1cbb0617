//! Acceptance suite. Each test prints one `PASS`/`FAIL` line for its
//! criterion before asserting. The heat-benchmark criteria share a single
//! pipeline run with the default configuration.

mod common;

use std::sync::{Arc, OnceLock};
use std::time::Instant;

use common::*;
use nalgebra::{DMatrix, DVector};
use seplqg::belief::{BeliefEngine, BeliefFilter, GaussianBelief};
use seplqg::harness::{self, check_theorem1, Theorem1Options, Theorem1Result};
use seplqg::lqg::{kf_forward, lqr_backward, LqgDesign};
use seplqg::pipeline::{self, Check, Identified, PipelineConfig};
use seplqg::plant::{HeatPlant, Plant};
use seplqg::sysid::{all_pairs, tv_era, validate_rom, LtvRom, MarkovParams};
use seplqg::trajopt::{gradient_fd, nominal_cost, optimize, rollout_belief, CostSpec, NominalTrajectory, OptimizeOptions};

struct Heat {
    cfg: PipelineConfig,
    plant: HeatPlant,
    nominal: NominalTrajectory,
    identified: Identified,
    design: Arc<LqgDesign>,
    report: harness::MonteCarloReport,
    theorem: Theorem1Result,
}

fn heat() -> &'static Heat {
    static HEAT: OnceLock<Heat> = OnceLock::new();
    HEAT.get_or_init(|| {
        let cfg = PipelineConfig::default();
        let plant = cfg.plant().unwrap();
        let clock = Instant::now();
        let nominal = pipeline::optimize(&cfg, &plant).unwrap();
        eprintln!("optimize: {:.0} s", clock.elapsed().as_secs_f64());
        let identified = pipeline::identify(&cfg, &plant, &nominal).unwrap();
        let design = Arc::new(pipeline::design(&cfg, identified.rom.clone()).unwrap());
        let clock = Instant::now();
        let report = pipeline::evaluate(&cfg, &plant, &nominal, &design).unwrap();
        eprintln!("evaluate: {:.0} s", clock.elapsed().as_secs_f64());
        let clock = Instant::now();
        let theorem = pipeline::theorem1(&cfg, &plant, &nominal, &design).unwrap();
        eprintln!("cost variation: {:.0} s", clock.elapsed().as_secs_f64());
        Heat {
            cfg,
            plant,
            nominal,
            identified,
            design,
            report,
            theorem,
        }
    })
}

fn verdict(criterion: u32, checks: &[Check]) {
    let passed = checks.iter().all(|c| c.passed);
    let detail: Vec<String> = checks.iter().map(|c| format!("{}: {}", c.name, c.detail)).collect();
    println!("{} criterion {criterion}: {}", if passed { "PASS" } else { "FAIL" }, detail.join("; "));
    assert!(passed, "criterion {criterion} failed");
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.to_string(),
        passed,
        detail,
    }
}

#[test]
fn criterion_1_nominal_reaches_and_holds_the_band() {
    let h = heat();
    assert_eq!(h.plant.spec().n_x, 100);
    assert_eq!(h.plant.spec().horizon, 250);
    assert_eq!(h.plant.spec().dt, 0.25);
    assert_eq!((h.plant.spec().n_u, h.plant.spec().n_y), (5, 5));
    verdict(1, &[pipeline::check_nominal(&h.cfg, &h.nominal)]);
}

#[test]
fn criterion_2_rom_order_and_riccati_size() {
    let h = heat();
    verdict(2, &[pipeline::check_rom(&h.cfg, &h.identified, Some(&h.design))]);
}

#[test]
fn criterion_3_closed_loop_beats_open_loop() {
    let h = heat();
    assert_eq!(h.report.n_runs, 1000);
    assert_eq!(h.plant.spec().process_noise, DMatrix::identity(5, 5));
    assert_eq!(h.plant.spec().measurement_noise, DMatrix::identity(5, 5));
    verdict(3, &[pipeline::check_closed_loop(&h.cfg, &h.report)]);
}

fn linear_theorem1() -> Check {
    let n = 30;
    let plant = lq_toy(n, 0.2, 0.1);
    let cost = CostSpec::isotropic(2, 1, 1.0, 0.5, 0.1, 4.0, 1.0).unwrap();
    let nominal = linear_nominal(&plant, &cost, 0.3);
    let design = exact_model_design(&plant, 0.2, 0.1, 0.3);
    let opts = Theorem1Options {
        n_runs: 5000,
        base_seed: 11,
        h: 1e-4,
        tracker: BeliefEngine::ExactKalman,
    };
    let r = check_theorem1(&plant, &nominal, &design, &cost, &opts).unwrap();
    check(
        "linear-Gaussian plant",
        r.within(3.0, 0.0),
        format!("mean dJ {:.4e}, SE {:.4e} over {} runs (budget 3 SE)", r.mean_delta_j, r.standard_error, r.samples.len()),
    )
}

#[test]
fn criterion_4_first_order_cost_variation_vanishes() {
    let h = heat();
    assert_eq!(h.theorem.samples.len(), 1000);
    verdict(4, &[linear_theorem1(), pipeline::check_theorem1(&h.cfg, &h.theorem)]);
}

fn oracle_enkf() -> Check {
    let plant = seplqg::plant::LinearPlant::lti(
        mat(2, 2, &[0.95, 0.1, 0.0, 0.9]),
        mat(2, 1, &[0.0, 1.0]),
        mat(1, 2, &[1.0, 0.0]),
        scalar(0.5),
        scalar(0.3),
        10,
        1.0,
    )
    .unwrap();
    let members = 20_000;
    let b0 = GaussianBelief::new(DVector::from_vec(vec![1.0, -1.0]), DMatrix::identity(2, 2)).unwrap();
    let exact = BeliefFilter::new(&plant, BeliefEngine::ExactKalman, 0).unwrap();
    let ens = BeliefFilter::new(&plant, BeliefEngine::ensemble(members), 7).unwrap();
    let (mut se, mut sk) = (ens.init(&b0).unwrap(), exact.init(&b0).unwrap());
    let mut worst: f64 = 0.0;
    for k in 0..6 {
        let u = DVector::from_element(1, 0.5);
        let y = DVector::from_element(1, 1.0 + 0.2 * k as f64);
        se = ens.update(&ens.predict(&se, k, &u).unwrap(), k + 1, &y).unwrap();
        sk = exact.update(&exact.predict(&sk, k, &u).unwrap(), k + 1, &y).unwrap();
        let (ge, gk) = (se.to_gaussian().unwrap(), sk.to_gaussian().unwrap());
        for i in 0..2 {
            let var = gk.cov()[(i, i)];
            let se_mean = (var / members as f64).sqrt();
            let se_var = var * (2.0 / (members as f64 - 1.0)).sqrt();
            worst = worst
                .max((ge.mean()[i] - gk.mean()[i]).abs() / se_mean)
                .max((ge.cov()[(i, i)] - var).abs() / se_var);
        }
    }
    check("(a) EnKF vs exact filter", worst <= 3.0, format!("worst deviation {worst:.2} SE at M = {members}"))
}

fn oracle_era() -> Check {
    let (a, b, c) = order3();
    let markov = MarkovParams::from_fn(2, 2, 40, |k, j| matrix_power_markov(&a, &b, &c, k, j));
    let rom: LtvRom = tv_era(&markov, 3, 4, 4).unwrap();
    let err = validate_rom(&rom, &markov, &all_pairs(&rom)).unwrap();
    let [lo, hi] = rom.time_range;
    let gap = (lo..=hi)
        .map(|k| rom.singular_values[k][3] / rom.singular_values[k][0])
        .fold(0.0, f64::max);
    check(
        "(b) order-3 realization",
        err <= 1e-8 && gap <= 1e-10,
        format!("Markov error {err:.2e}, max s4/s1 {gap:.2e}"),
    )
}

fn oracle_scalar_recursions() -> Check {
    let rom = LtvRom::from_matrices(vec![scalar(1.0)], vec![scalar(1.0)], vec![scalar(1.0); 2]).unwrap();
    let lqr = lqr_backward(&rom, &[scalar(1.0)], &scalar(1.0), &[scalar(1.0)]).unwrap();
    let hand = (lqr.gains[0][(0, 0)] - 0.5).abs().max((lqr.riccati[0][(0, 0)] - 1.5).abs());
    let (a, w, v) = (0.9, 0.5, 2.0);
    let long = LtvRom::from_matrices(vec![scalar(a); 400], vec![scalar(1.0); 400], vec![scalar(1.0); 401]).unwrap();
    let kf = kf_forward(&long, &scalar(w), &scalar(v), &scalar(1.0)).unwrap();
    let (qb, qc) = (v - a * a * v - w, -w * v);
    let fixed = (-qb + (qb * qb - 4.0 * qc).sqrt()) / 2.0;
    let fp = (kf.predicted[400][(0, 0)] - fixed).abs();
    check(
        "(c) scalar recursions",
        hand <= 1e-10 && fp <= 1e-10,
        format!("hand-value error {hand:.1e}, fixed-point error {fp:.1e}"),
    )
}

fn oracle_gradient() -> Check {
    let plant = lq_toy(TOY_N, 0.1, 0.2);
    let (h, g) = toy_quadratic();
    let u = DVector::from_fn(TOY_N, |i, _| (i as f64 * 0.7).sin());
    let fd = gradient_fd(&controls_from(&u), &toy_b0(), &plant, &toy_spec(), 1e-3, BeliefEngine::ExactKalman, 0).unwrap();
    let exact = &h * &u + &g;
    let rel = (flatten(&fd) - &exact).norm() / exact.norm();
    check("(d) finite-difference gradient", rel <= 1e-4, format!("relative error {rel:.2e}"))
}

fn oracle_optimum() -> Check {
    let plant = lq_toy(TOY_N, 0.1, 0.2);
    let spec = toy_spec();
    let b0 = toy_b0();
    let (h, g) = toy_quadratic();
    let u_star = controls_from(&h.clone().cholesky().unwrap().solve(&(-&g)));
    let beliefs = rollout_belief(&u_star, &b0, &plant, BeliefEngine::ExactKalman, 0).unwrap();
    let j_star = nominal_cost(&beliefs, &u_star, &spec).unwrap();
    let opts = OptimizeOptions {
        alpha: 1.0 / h.symmetric_eigenvalues().max(),
        max_iters: 3000,
        tol: 1e-12,
        fd_step: 1e-3,
        engine: BeliefEngine::ExactKalman,
        seed: 0,
    };
    let found = optimize(&vec![DVector::zeros(1); TOY_N], &b0, &plant, &spec, &opts).unwrap();
    let gap = found.nominal_cost / j_star - 1.0;
    check("(e) LQ toy optimum", gap <= 0.01, format!("J = {:.6} vs optimum {j_star:.6} ({:.3}%)", found.nominal_cost, 100.0 * gap))
}

#[test]
fn criterion_5_oracle_equivalence() {
    let clock = Instant::now();
    let checks = [oracle_enkf(), oracle_era(), oracle_scalar_recursions(), oracle_gradient(), oracle_optimum()];
    let secs = clock.elapsed().as_secs_f64();
    let mut all = checks.to_vec();
    all.push(check("runtime", secs <= 300.0, format!("{secs:.1} s (max 300 s)")));
    verdict(5, &all);
}

#[test]
fn criterion_6_complexity_accounting() {
    let cfg = PipelineConfig::default();
    let report = harness::complexity_report(cfg.plant().unwrap().spec().n_x, cfg.identify.n_r.unwrap()).unwrap();
    let text = report.to_string();
    let printed = check(
        "printed summary",
        text.contains("10100 x 10100 vs 20 x 20 Riccati") && text.contains("2.5e5"),
        text.lines().collect::<Vec<_>>().join(" | "),
    );
    verdict(6, &[pipeline::check_complexity(&cfg, &report), printed]);
}
