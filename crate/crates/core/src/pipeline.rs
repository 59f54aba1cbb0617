//! End-to-end heat benchmark: configuration, the four stages, file outputs
//! and the pass/fail checks the command-line tool reports.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::belief::{BeliefEngine, GaussianBelief};
use crate::error::{Error, Result};
use crate::harness::{
    self, ComplexityReport, MonteCarloOptions, MonteCarloReport, Theorem1Options, Theorem1Result,
};
use crate::lqg::{LqgDesign, LqgWeights};
use crate::plant::{HeatPlant, HeatPlantConfig, Plant};
use crate::sysid::{self, LtvRom, MarkovParams};
use crate::trajopt::{self, CostConfig, NominalTrajectory, OptimizeOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeConfig {
    pub alpha: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub fd_step: f64,
    pub ensemble_size: usize,
    pub seed: u64,
    /// Constant initial guess for every control entry.
    pub u_init: f64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            alpha: 1.4,
            max_iters: 40,
            tol: 1e-6,
            fd_step: 1e-3,
            ensemble_size: 20,
            seed: 0,
            u_init: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentifyConfig {
    /// ROM order; `None` selects it from the Hankel spectrum.
    pub n_r: Option<usize>,
    pub p: Option<usize>,
    pub q: Option<usize>,
    pub epsilon: f64,
    /// Relative singular-value threshold used when `n_r` is `None`.
    pub order_threshold: f64,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        Self {
            n_r: Some(20),
            p: None,
            q: None,
            epsilon: 1e-2,
            order_threshold: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub n_runs: usize,
    pub seed: u64,
    /// Fractional probe positions on [0, 1].
    pub probes: Vec<f64>,
    pub theorem_runs: usize,
    /// Ensemble size of the belief tracker; defaults to the optimizer's.
    pub tracker_ensemble: Option<usize>,
    pub cost_fd_step: f64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            n_runs: 1000,
            seed: 1,
            probes: vec![0.4, 0.9],
            theorem_runs: 1000,
            tracker_ensemble: None,
            cost_fd_step: 1e-4,
        }
    }
}

/// Thresholds of the pass/fail report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcceptanceConfig {
    pub band: [f64; 2],
    pub band_window: [f64; 2],
    pub mean_tolerance: f64,
    pub mean_check_times: Vec<f64>,
    pub expected_order: usize,
    pub markov_error_max: f64,
    pub theorem_sigmas: f64,
    pub theorem_rel_budget: f64,
    pub complexity_ratio: f64,
}

impl Default for AcceptanceConfig {
    fn default() -> Self {
        Self {
            band: [147.0, 153.0],
            band_window: [37.5, 62.5],
            mean_tolerance: 3.0,
            mean_check_times: vec![37.5, 62.5],
            expected_order: 20,
            markov_error_max: 0.05,
            theorem_sigmas: 3.0,
            theorem_rel_budget: 0.02,
            complexity_ratio: 2.5e5,
        }
    }
}

/// Everything the benchmark pipeline reads.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub plant: HeatPlantConfig,
    pub cost: CostConfig,
    pub optimize: OptimizeConfig,
    pub identify: IdentifyConfig,
    pub lqg: LqgWeights,
    pub evaluate: EvaluateConfig,
    pub acceptance: AcceptanceConfig,
}

impl PipelineConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn plant(&self) -> Result<HeatPlant> {
        HeatPlant::new(self.plant.clone())
    }

    /// Step index closest to time `t`.
    pub fn step_at(&self, t: f64) -> usize {
        ((t / self.plant.dt).round() as usize).min(self.plant.horizon)
    }

    pub fn probe_nodes(&self) -> Vec<usize> {
        self.evaluate.probes.iter().map(|&p| self.plant.node(p)).collect()
    }
}

pub fn optimize(cfg: &PipelineConfig, plant: &HeatPlant) -> Result<NominalTrajectory> {
    let spec = plant.spec();
    let cost = cfg.cost.build(spec.n_x, spec.n_u)?;
    let b0 = GaussianBelief::deterministic(plant.initial_state());
    let u0 = vec![DVector::from_element(spec.n_u, cfg.optimize.u_init); spec.horizon];
    let o = &cfg.optimize;
    let opts = OptimizeOptions {
        alpha: o.alpha,
        max_iters: o.max_iters,
        tol: o.tol,
        fd_step: o.fd_step,
        engine: BeliefEngine::ensemble(o.ensemble_size),
        seed: o.seed,
    };
    trajopt::optimize(&u0, &b0, plant, &cost, &opts)
}

/// ROM plus the data it was validated against.
#[derive(Debug, Clone)]
pub struct Identified {
    pub markov: MarkovParams,
    pub rom: LtvRom,
    /// Relative Markov error on pairs whose lag exceeds `p + q`.
    pub holdout_error: f64,
    pub holdout_pairs: usize,
}

pub fn identify<P: Plant + ?Sized>(cfg: &PipelineConfig, plant: &P, nominal: &NominalTrajectory) -> Result<Identified> {
    let spec = plant.spec();
    let id = &cfg.identify;
    let markov = sysid::collect_impulse_responses(plant, nominal, id.epsilon)?;
    let n_r = match id.n_r {
        Some(n) => n,
        None => {
            let (p, q) = sysid::default_blocks(spec.n_x.min(40), spec.n_y, spec.n_u);
            sysid::select_order(&markov, p, q, id.order_threshold)
        }
    };
    let (dp, dq) = sysid::default_blocks(n_r, spec.n_y, spec.n_u);
    let (p, q) = (id.p.unwrap_or(dp), id.q.unwrap_or(dq));
    let rom = sysid::tv_era(&markov, n_r, p, q)?;
    let holdout = sysid::long_lag_pairs(&rom, p + q);
    let holdout_error = sysid::validate_rom(&rom, &markov, &holdout)?;
    Ok(Identified {
        markov,
        rom,
        holdout_error,
        holdout_pairs: holdout.len(),
    })
}

pub fn design(cfg: &PipelineConfig, rom: LtvRom) -> Result<LqgDesign> {
    LqgDesign::new(rom, cfg.lqg.clone())
}

pub fn evaluate<P: Plant + ?Sized>(
    cfg: &PipelineConfig,
    plant: &P,
    nominal: &NominalTrajectory,
    design: &Arc<LqgDesign>,
) -> Result<MonteCarloReport> {
    let spec = plant.spec();
    let opts = MonteCarloOptions {
        n_runs: cfg.evaluate.n_runs,
        base_seed: cfg.evaluate.seed,
        probes: cfg.probe_nodes(),
        cost: Some(cfg.cost.build(spec.n_x, spec.n_u)?),
    };
    harness::run_monte_carlo(plant, nominal, design, &opts)
}

pub fn theorem1<P: Plant + ?Sized>(
    cfg: &PipelineConfig,
    plant: &P,
    nominal: &NominalTrajectory,
    design: &Arc<LqgDesign>,
) -> Result<Theorem1Result> {
    let spec = plant.spec();
    let cost = cfg.cost.build(spec.n_x, spec.n_u)?;
    let opts = Theorem1Options {
        n_runs: cfg.evaluate.theorem_runs,
        base_seed: cfg.evaluate.seed,
        h: cfg.evaluate.cost_fd_step,
        tracker: BeliefEngine::ensemble(cfg.evaluate.tracker_ensemble.unwrap_or(cfg.optimize.ensemble_size)),
    };
    harness::check_theorem1(plant, nominal, design, &cost, &opts)
}

/// One pass/fail line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {}", self.name, self.detail)
    }
}

/// Extremes of every nominal mean component over the band window.
pub fn nominal_extremes(cfg: &PipelineConfig, nominal: &NominalTrajectory) -> (f64, f64) {
    let [t0, t1] = cfg.acceptance.band_window;
    let (k0, k1) = (cfg.step_at(t0), cfg.step_at(t1));
    nominal.means[k0..=k1]
        .iter()
        .flat_map(|m| m.iter().copied())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

pub fn check_nominal(cfg: &PipelineConfig, nominal: &NominalTrajectory) -> Check {
    let (lo, hi) = nominal_extremes(cfg, nominal);
    let [a, b] = cfg.acceptance.band;
    let [t0, t1] = cfg.acceptance.band_window;
    Check::new(
        "nominal band",
        lo >= a && hi <= b,
        format!(
            "nominal means over t in [{t0}, {t1}] s span [{lo:.3}, {hi:.3}] (band [{a}, {b}]); {} iterations, J = {:.4}",
            nominal.iterations, nominal.nominal_cost
        ),
    )
}

/// Order and held-out error of the ROM and, when given, the Riccati sizes of its design.
pub fn check_rom(cfg: &PipelineConfig, identified: &Identified, design: Option<&LqgDesign>) -> Check {
    let n = cfg.acceptance.expected_order;
    let mut passed = identified.rom.n_r == n && identified.holdout_error <= cfg.acceptance.markov_error_max;
    let mut detail = format!(
        "n_r = {}, held-out Markov error {:.4} over {} pairs (max {})",
        identified.rom.n_r, identified.holdout_error, identified.holdout_pairs, cfg.acceptance.markov_error_max
    );
    if identified.rom.gap_warning {
        detail.push_str(", no clear singular-value gap at this order");
    }
    if let Some(design) = design {
        let (s, p) = design.riccati_dims();
        passed &= s == (n, n) && p == (n, n);
        detail.push_str(&format!(
            ", regulator Riccati {}x{}, estimator Riccati {}x{}",
            s.0, s.1, p.0, p.1
        ));
    }
    Check::new("ROM order and Riccati size", passed, detail)
}

/// Riccati sizes of a design loaded without its identification data.
pub fn check_design(cfg: &PipelineConfig, design: &LqgDesign) -> Check {
    let n = cfg.acceptance.expected_order;
    let (s, p) = design.riccati_dims();
    Check::new(
        "Riccati size",
        s == (n, n) && p == (n, n),
        format!("regulator Riccati {}x{}, estimator Riccati {}x{} (expected {n}x{n})", s.0, s.1, p.0, p.1),
    )
}

pub fn check_closed_loop(cfg: &PipelineConfig, report: &MonteCarloReport) -> Check {
    let mut passed = true;
    let mut parts = Vec::new();
    for (probe, frac) in report.per_position_errors.iter().zip(&cfg.evaluate.probes) {
        let (closed, open) = probe.time_averaged_sq_error();
        passed &= closed < open;
        parts.push(format!("x={frac}L closed {closed:.4} vs open {open:.4}"));
    }
    for &t in &cfg.acceptance.mean_check_times {
        let dev = report.max_mean_deviation(cfg.step_at(t));
        passed &= dev <= cfg.acceptance.mean_tolerance;
        parts.push(format!("max |mean - nominal| at t={t}s {dev:.3}"));
    }
    Check::new(
        "closed loop vs open loop",
        passed,
        format!("{} runs ({} failed): {}", report.n_runs, report.n_failed, parts.join(", ")),
    )
}

pub fn check_theorem1(cfg: &PipelineConfig, result: &Theorem1Result) -> Check {
    let a = &cfg.acceptance;
    Check::new(
        "first-order cost variation",
        result.within(a.theorem_sigmas, a.theorem_rel_budget),
        format!(
            "mean dJ {:.4e}, SE {:.4e}, J = {:.4} over {} runs (budget max({} SE, {} J))",
            result.mean_delta_j,
            result.standard_error,
            result.nominal_cost,
            result.samples.len(),
            a.theorem_sigmas,
            a.theorem_rel_budget
        ),
    )
}

pub fn check_complexity(cfg: &PipelineConfig, report: &ComplexityReport) -> Check {
    let expected = cfg.acceptance.complexity_ratio;
    let ok = (report.ratio - expected).abs() <= 1e-9 * expected && report.full_riccati == report.belief_dim;
    Check::new(
        "complexity accounting",
        ok,
        format!(
            "{} x {} vs {} x {} Riccati, ratio {:.1e}",
            report.full_riccati, report.full_riccati, report.rom_riccati, report.rom_riccati, report.ratio
        ),
    )
}

/// `k, t, mu_<node>..., u_<i>...` with the nominal mean at the sensor nodes.
pub fn write_nominal_csv(path: impl AsRef<Path>, plant: &HeatPlant, nominal: &NominalTrajectory) -> Result<()> {
    let mut out = csv::Writer::from_path(path)?;
    let sensors = plant.sensor_nodes();
    let n_u = nominal.controls[0].len();
    let mut header = vec!["k".to_string(), "t".to_string()];
    header.extend(sensors.iter().map(|i| format!("mu_{i}")));
    header.extend((0..n_u).map(|i| format!("u_{i}")));
    out.write_record(&header)?;
    for (k, mean) in nominal.means.iter().enumerate() {
        let mut row = vec![k.to_string(), plant.config().time(k).to_string()];
        row.extend(sensors.iter().map(|&i| mean[i].to_string()));
        match nominal.controls.get(k) {
            Some(u) => row.extend(u.iter().map(|v| v.to_string())),
            None => row.extend(std::iter::repeat_n(String::new(), n_u)),
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Long-format nominal temperature field: `t, x, temperature`.
pub fn write_fig2_csv(path: impl AsRef<Path>, plant: &HeatPlant, nominal: &NominalTrajectory) -> Result<()> {
    let mut out = csv::Writer::from_path(path)?;
    out.write_record(["t", "x", "temperature"])?;
    let dx = plant.config().dx();
    for (k, mean) in nominal.means.iter().enumerate() {
        let t = plant.config().time(k);
        for (i, v) in mean.iter().enumerate() {
            out.write_record([t.to_string(), (i as f64 * dx).to_string(), v.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `t, pos, closed_err, open_err, two_sigma` from the sample run of each probe.
pub fn write_fig3_csv(path: impl AsRef<Path>, plant: &HeatPlant, report: &MonteCarloReport) -> Result<()> {
    let mut out = csv::Writer::from_path(path)?;
    out.write_record(["t", "pos", "closed_err", "open_err", "two_sigma"])?;
    let dx = plant.config().dx();
    for probe in &report.per_position_errors {
        let pos = probe.index as f64 * dx;
        for k in 0..probe.closed_sample.len() {
            out.write_record([
                plant.config().time(k).to_string(),
                pos.to_string(),
                probe.closed_sample[k].to_string(),
                probe.open_sample[k].to_string(),
                probe.two_sigma[k].to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Long-format Hankel spectra: `k, index, singular_value`.
pub fn write_singular_values_csv(path: impl AsRef<Path>, rom: &LtvRom) -> Result<()> {
    let mut out = csv::Writer::from_path(path)?;
    out.write_record(["k", "index", "singular_value"])?;
    for (k, values) in rom.singular_values.iter().enumerate() {
        for (i, s) in values.iter().enumerate() {
            out.write_record([k.to_string(), (i + 1).to_string(), s.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(file, value)?;
    Ok(())
}

/// Fails with a configuration error unless `path` exists.
pub fn require(path: &Path, produced_by: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{} not found; run `{produced_by}` first or pass its path",
            path.display()
        )))
    }
}
