//! Monte Carlo evaluation of the closed loop, the first-order cost-variation
//! check and the complexity accounting.
//!
//! Every run `r` draws its noise from streams seeded with
//! `derive_seed(base_seed, r)`, indexed by time step, so results do not depend
//! on scheduling. The open-loop comparison run with the same index replays
//! exactly the same `w_k`, `v_k` and initial state.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::{BeliefEngine, BeliefFilter, GaussianBelief};
use crate::error::{Error, Result};
use crate::linalg::matrix_serde;
use crate::lqg::{LqgController, LqgDesign};
use crate::plant::{simulate_nominal, Plant};
use crate::rng::{derive_seed, Channel, GaussianSampler, StreamKey};
use crate::trajopt::{CostSpec, NominalTrajectory};

/// Runs are simulated in parallel batches of this size and folded in order.
const BATCH: usize = 64;

/// Largest tolerated fraction of diverged runs.
const MAX_FAILURE_FRACTION: f64 = 0.01;

/// Noise realization of one run.
struct RunNoise {
    x0: DVector<f64>,
    process: StreamKey,
    measurement: StreamKey,
}

impl RunNoise {
    fn new(base_seed: u64, run: usize, b0: &GaussianBelief) -> Self {
        let seed = derive_seed(base_seed, run as u64);
        let mut rng: ChaCha8Rng = StreamKey::new(seed, Channel::InitialState).rng(0, 0);
        let x0 = b0.mean() + GaussianSampler::new(b0.cov()).sample(&mut rng);
        Self {
            x0,
            process: StreamKey::new(seed, Channel::ProcessNoise),
            measurement: StreamKey::new(seed, Channel::MeasurementNoise),
        }
    }

    fn w(&self, sampler: &GaussianSampler, k: usize) -> DVector<f64> {
        sampler.sample(&mut self.process.rng(k as u64, 0))
    }

    fn v(&self, sampler: &GaussianSampler, k: usize) -> DVector<f64> {
        sampler.sample(&mut self.measurement.rng(k as u64, 0))
    }
}

/// One simulated trajectory.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub observations: Vec<DVector<f64>>,
}

struct Samplers {
    w: GaussianSampler,
    v: GaussianSampler,
}

impl Samplers {
    fn new<P: Plant + ?Sized>(plant: &P) -> Self {
        Self {
            w: GaussianSampler::new(&plant.spec().process_noise),
            v: GaussianSampler::new(&plant.spec().measurement_noise),
        }
    }
}

/// Simulates the plant under a control law `policy(k, y_k) -> u_k`.
fn simulate<P: Plant + ?Sized>(
    plant: &P,
    noise: &RunNoise,
    samplers: &Samplers,
    horizon: usize,
    mut policy: impl FnMut(usize, &DVector<f64>) -> Result<DVector<f64>>,
) -> Result<Trajectory> {
    let mut x = noise.x0.clone();
    let mut states = Vec::with_capacity(horizon + 1);
    let mut controls = Vec::with_capacity(horizon);
    let mut observations = Vec::with_capacity(horizon + 1);
    for k in 0..horizon {
        let y = plant.observe(k, &x, &noise.v(&samplers.v, k))?;
        let u = policy(k, &y)?;
        let next = plant.step(k, &x, &u, &noise.w(&samplers.w, k))?;
        states.push(std::mem::replace(&mut x, next));
        controls.push(u);
        observations.push(y);
    }
    observations.push(plant.observe(horizon, &x, &noise.v(&samplers.v, horizon))?);
    states.push(x);
    Ok(Trajectory {
        states,
        controls,
        observations,
    })
}

/// Closed-loop run `run` of a Monte Carlo experiment.
pub fn simulate_closed_loop<P: Plant + ?Sized>(
    plant: &P,
    nominal: &NominalTrajectory,
    design: &Arc<LqgDesign>,
    base_seed: u64,
    run: usize,
) -> Result<Trajectory> {
    let b0 = nominal.initial_belief()?;
    let noise = RunNoise::new(base_seed, run, &b0);
    let mut ctrl = LqgController::new(Arc::clone(design));
    simulate(plant, &noise, &Samplers::new(plant), nominal.horizon(), |k, y| {
        ctrl.closed_loop_step(k, y, nominal)
    })
}

/// Open-loop run `run`, replaying the noise of the closed-loop run with the same index.
pub fn simulate_open_loop<P: Plant + ?Sized>(
    plant: &P,
    nominal: &NominalTrajectory,
    base_seed: u64,
    run: usize,
) -> Result<Trajectory> {
    let b0 = nominal.initial_belief()?;
    let noise = RunNoise::new(base_seed, run, &b0);
    simulate(plant, &noise, &Samplers::new(plant), nominal.horizon(), |k, _| {
        Ok(nominal.controls[k].clone())
    })
}

/// Monte Carlo settings.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloOptions {
    pub n_runs: usize,
    pub base_seed: u64,
    /// State indices whose errors are reported.
    pub probes: Vec<usize>,
    /// Cost used for the realized per-run cost.
    pub cost: Option<CostSpec>,
}

/// Error statistics at one probed state component. Errors are taken against
/// the noiseless nominal state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSeries {
    pub index: usize,
    /// Mean closed-loop error across runs.
    pub closed_mean: Vec<f64>,
    /// Root-mean-square closed-loop error across runs.
    pub closed_rms: Vec<f64>,
    pub open_mean: Vec<f64>,
    pub open_rms: Vec<f64>,
    /// Twice the across-run standard deviation of the closed-loop error.
    pub two_sigma: Vec<f64>,
    /// Closed-loop and open-loop error of the first successful run.
    pub closed_sample: Vec<f64>,
    pub open_sample: Vec<f64>,
}

impl ProbeSeries {
    /// Time-averaged mean squared error `(closed, open)`.
    pub fn time_averaged_sq_error(&self) -> (f64, f64) {
        let avg = |s: &[f64]| s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64;
        (avg(&self.closed_rms), avg(&self.open_rms))
    }

    /// Fraction of steps where the sample closed-loop error lies within the band.
    pub fn sample_coverage(&self) -> f64 {
        let inside = self
            .closed_sample
            .iter()
            .zip(&self.two_sigma)
            .filter(|(e, b)| e.abs() <= **b)
            .count();
        inside as f64 / self.closed_sample.len() as f64
    }
}

/// Aggregated closed-loop versus open-loop statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub n_runs: usize,
    pub n_failed: usize,
    pub base_seed: u64,
    /// How per-run seeds are derived from `base_seed`.
    pub seed_rule: String,
    pub dt: f64,
    #[serde(with = "matrix_serde::vectors")]
    pub mean_traj: Vec<DVector<f64>>,
    #[serde(with = "matrix_serde::vectors")]
    pub open_mean_traj: Vec<DVector<f64>>,
    /// Noiseless state trajectory under the nominal controls.
    #[serde(with = "matrix_serde::vectors")]
    pub nominal_states: Vec<DVector<f64>>,
    pub per_position_errors: Vec<ProbeSeries>,
    pub cost_samples: Vec<f64>,
    pub delta_j_samples: Vec<f64>,
}

impl MonteCarloReport {
    /// Largest `|mean closed-loop state − nominal state|` over components at step `k`.
    pub fn max_mean_deviation(&self, k: usize) -> f64 {
        (&self.mean_traj[k] - &self.nominal_states[k]).amax()
    }

    pub fn probe(&self, index: usize) -> Option<&ProbeSeries> {
        self.per_position_errors.iter().find(|p| p.index == index)
    }

    pub fn save_json(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }
}

fn realized_cost(cost: &CostSpec, traj: &Trajectory) -> f64 {
    let n = traj.controls.len();
    let stages: f64 = (0..n)
        .map(|k| cost.stage_cost(k, &traj.states[k], 0.0, &traj.controls[k]))
        .sum();
    stages + cost.terminal_cost(&traj.states[n], 0.0)
}

struct RunOutcome {
    closed: Trajectory,
    open: Trajectory,
}

/// Simulates `n_runs` paired closed-loop and open-loop runs on `plant`.
pub fn run_monte_carlo<P: Plant + ?Sized>(
    plant: &P,
    nominal: &NominalTrajectory,
    design: &Arc<LqgDesign>,
    opts: &MonteCarloOptions,
) -> Result<MonteCarloReport> {
    if opts.n_runs == 0 {
        return Err(Error::Config("at least one Monte Carlo run is required".into()));
    }
    nominal.validate()?;
    let spec = plant.spec();
    let n = nominal.horizon();
    if n != spec.horizon || n > design.horizon() {
        return Err(Error::Dimension("nominal, plant and controller horizons differ".into()));
    }
    if let Some(&bad) = opts.probes.iter().find(|&&i| i >= spec.n_x) {
        return Err(Error::Index(format!("probe index {bad} outside the state")));
    }
    let reference = simulate_nominal(plant, &nominal.means[0], &nominal.controls)?.states;

    let n_x = spec.n_x;
    let n_p = opts.probes.len();
    let mut closed_sum = vec![DVector::zeros(n_x); n + 1];
    let mut open_sum = vec![DVector::zeros(n_x); n + 1];
    // per probe, per step: Σe, Σe² for closed and open loop
    let mut moments = vec![[0.0f64; 4]; n_p * (n + 1)];
    let mut first: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut costs = Vec::new();
    let mut succeeded = 0usize;
    let mut failed = 0usize;

    for start in (0..opts.n_runs).step_by(BATCH) {
        let end = (start + BATCH).min(opts.n_runs);
        let outcomes: Vec<Result<RunOutcome>> = (start..end)
            .into_par_iter()
            .map(|r| {
                Ok(RunOutcome {
                    closed: simulate_closed_loop(plant, nominal, design, opts.base_seed, r)?,
                    open: simulate_open_loop(plant, nominal, opts.base_seed, r)?,
                })
            })
            .collect();
        for outcome in outcomes {
            let run = match outcome {
                Ok(run) => run,
                Err(Error::Diverged { .. }) => {
                    failed += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            succeeded += 1;
            for k in 0..=n {
                closed_sum[k] += &run.closed.states[k];
                open_sum[k] += &run.open.states[k];
                for (p, &i) in opts.probes.iter().enumerate() {
                    let ec = run.closed.states[k][i] - reference[k][i];
                    let eo = run.open.states[k][i] - reference[k][i];
                    let m = &mut moments[p * (n + 1) + k];
                    m[0] += ec;
                    m[1] += ec * ec;
                    m[2] += eo;
                    m[3] += eo * eo;
                }
            }
            if first.is_none() {
                first = Some((
                    (0..=n).flat_map(|k| opts.probes.iter().map(move |&i| (k, i)))
                        .map(|(k, i)| run.closed.states[k][i] - reference[k][i])
                        .collect(),
                    (0..=n).flat_map(|k| opts.probes.iter().map(move |&i| (k, i)))
                        .map(|(k, i)| run.open.states[k][i] - reference[k][i])
                        .collect(),
                ));
            }
            if let Some(cost) = &opts.cost {
                costs.push(realized_cost(cost, &run.closed));
            }
        }
    }
    if failed as f64 > MAX_FAILURE_FRACTION * opts.n_runs as f64 || succeeded == 0 {
        return Err(Error::TooManyFailures {
            failed,
            total: opts.n_runs,
        });
    }

    let count = succeeded as f64;
    let (closed_first, open_first) = first.expect("at least one successful run");
    let per_position_errors = opts
        .probes
        .iter()
        .enumerate()
        .map(|(p, &index)| {
            let row = |k: usize| moments[p * (n + 1) + k];
            let mean = |s: f64| s / count;
            let std = |s: f64, s2: f64| {
                if succeeded > 1 {
                    ((s2 - s * s / count) / (count - 1.0)).max(0.0).sqrt()
                } else {
                    0.0
                }
            };
            ProbeSeries {
                index,
                closed_mean: (0..=n).map(|k| mean(row(k)[0])).collect(),
                closed_rms: (0..=n).map(|k| mean(row(k)[1]).sqrt()).collect(),
                open_mean: (0..=n).map(|k| mean(row(k)[2])).collect(),
                open_rms: (0..=n).map(|k| mean(row(k)[3]).sqrt()).collect(),
                two_sigma: (0..=n).map(|k| 2.0 * std(row(k)[0], row(k)[1])).collect(),
                closed_sample: (0..=n).map(|k| closed_first[k * n_p + p]).collect(),
                open_sample: (0..=n).map(|k| open_first[k * n_p + p]).collect(),
            }
        })
        .collect();
    Ok(MonteCarloReport {
        n_runs: opts.n_runs,
        n_failed: failed,
        base_seed: opts.base_seed,
        seed_rule: "run r uses derive_seed(base_seed, r) (SplitMix64); noise streams are keyed by channel and step".into(),
        dt: spec.dt,
        mean_traj: closed_sum.into_iter().map(|s| s / count).collect(),
        open_mean_traj: open_sum.into_iter().map(|s| s / count).collect(),
        nominal_states: reference,
        per_position_errors,
        cost_samples: costs,
        delta_j_samples: Vec::new(),
    })
}

/// Gradients of the stage costs at the nominal belief and controls.
#[derive(Debug, Clone)]
pub struct CostGradients {
    /// `∂c_k/∂μ`, `k = 0..N` (the last entry belongs to the terminal cost).
    pub mean: Vec<DVector<f64>>,
    /// `∂c_k/∂ tr Σ`; all zero when the cost has no covariance term.
    pub trace: Vec<f64>,
    /// `∂c_k/∂u`, `k = 0..N-1`.
    pub control: Vec<DVector<f64>>,
}

/// Central differences of the stage and terminal costs around the nominal.
pub fn cost_gradients(nominal: &NominalTrajectory, spec: &CostSpec, h: f64) -> Result<CostGradients> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }
    let n = nominal.horizon();
    let stage = |k: usize, mean: &DVector<f64>, trace: f64, u: Option<&DVector<f64>>| match u {
        Some(u) => spec.stage_cost(k, mean, trace, u),
        None => spec.terminal_cost(mean, trace),
    };
    let central = |f: &dyn Fn(f64) -> f64| (f(h) - f(-h)) / (2.0 * h);
    let mut out = CostGradients {
        mean: Vec::with_capacity(n + 1),
        trace: Vec::with_capacity(n + 1),
        control: Vec::with_capacity(n),
    };
    for k in 0..=n {
        let mu = &nominal.means[k];
        let tr = nominal.covs[k].trace();
        let u = nominal.controls.get(k);
        out.mean.push(DVector::from_iterator(
            mu.len(),
            (0..mu.len()).map(|i| {
                central(&|d| {
                    let mut m = mu.clone();
                    m[i] += d;
                    stage(k, &m, tr, u)
                })
            }),
        ));
        out.trace.push(if spec.q_trace() > 0.0 {
            central(&|d| stage(k, mu, tr + d, u))
        } else {
            0.0
        });
        if let Some(u) = u {
            out.control.push(DVector::from_iterator(
                u.len(),
                (0..u.len()).map(|i| {
                    central(&|d| {
                        let mut v = u.clone();
                        v[i] += d;
                        stage(k, mu, tr, Some(&v))
                    })
                }),
            ));
        }
    }
    Ok(out)
}

/// Outcome of the first-order cost-variation check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Result {
    pub mean_delta_j: f64,
    pub standard_error: f64,
    pub nominal_cost: f64,
    pub samples: Vec<f64>,
}

impl Theorem1Result {
    fn from_samples(samples: Vec<f64>, nominal_cost: f64) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = if samples.len() > 1 {
            samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mean_delta_j: mean,
            standard_error: (var / n).sqrt(),
            nominal_cost,
            samples,
        }
    }

    /// `|mean| <= max(sigmas · SE, rel_budget · J̄)`.
    pub fn within(&self, sigmas: f64, rel_budget: f64) -> bool {
        self.mean_delta_j.abs() <= (sigmas * self.standard_error).max(rel_budget * self.nominal_cost.abs())
    }
}

/// Settings of [`check_theorem1`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem1Options {
    pub n_runs: usize,
    pub base_seed: u64,
    /// Step for the cost-gradient finite differences.
    pub h: f64,
    /// Belief engine tracking each closed-loop run.
    pub tracker: BeliefEngine,
}

/// First-order cost deviation of each closed-loop run,
/// `δJ = Σ_k C^b_k·(b_k − b̄_k) + C^u_k·(u_k − ū_k)`, evaluated on the belief
/// a filter on the true plant forms from the run's measurements and controls.
pub fn check_theorem1<P: Plant + ?Sized>(
    plant: &P,
    nominal: &NominalTrajectory,
    design: &Arc<LqgDesign>,
    spec: &CostSpec,
    opts: &Theorem1Options,
) -> Result<Theorem1Result> {
    if opts.n_runs < 2 {
        return Err(Error::Config("the cost-variation check needs at least two runs".into()));
    }
    let grads = cost_gradients(nominal, spec, opts.h)?;
    let b0 = nominal.initial_belief()?;
    let n = nominal.horizon();
    let nominal_traces: Vec<f64> = nominal.covs.iter().map(|c| c.trace()).collect();

    let one_run = |r: usize| -> Result<f64> {
        let traj = simulate_closed_loop(plant, nominal, design, opts.base_seed, r)?;
        let seed = derive_seed(derive_seed(opts.base_seed, r as u64), Channel::Tracker as u64);
        let filter = BeliefFilter::new(plant, opts.tracker, seed)?;
        let mut belief = filter.init(&b0)?;
        let mut dj = 0.0;
        for k in 0..=n {
            if k > 0 {
                let predicted = filter.predict(&belief, k - 1, &traj.controls[k - 1])?;
                belief = filter.update(&predicted, k, &traj.observations[k])?;
            }
            let dm = belief.mean() - &nominal.means[k];
            dj += grads.mean[k].dot(&dm);
            if grads.trace[k] != 0.0 {
                dj += grads.trace[k] * (belief.cov_trace() - nominal_traces[k]);
            }
            if k < n {
                dj += grads.control[k].dot(&(&traj.controls[k] - &nominal.controls[k]));
            }
        }
        Ok(dj)
    };

    let mut samples = Vec::with_capacity(opts.n_runs);
    let mut failed = 0usize;
    for start in (0..opts.n_runs).step_by(BATCH) {
        let end = (start + BATCH).min(opts.n_runs);
        let batch: Vec<Result<f64>> = (start..end).into_par_iter().map(one_run).collect();
        for r in batch {
            match r {
                Ok(v) => samples.push(v),
                Err(Error::Diverged { .. }) => failed += 1,
                Err(e) => return Err(e),
            }
        }
    }
    if failed as f64 > MAX_FAILURE_FRACTION * opts.n_runs as f64 || samples.len() < 2 {
        return Err(Error::TooManyFailures {
            failed,
            total: opts.n_runs,
        });
    }
    Ok(Theorem1Result::from_samples(samples, nominal.nominal_cost))
}

/// Riccati sizes of a full-order belief-space design against the ROM design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub n_x: usize,
    pub n_r: usize,
    /// Gaussian belief dimension `n_x + n_x²`.
    pub belief_dim: usize,
    pub full_riccati: usize,
    pub rom_riccati: usize,
    /// `n_x⁴ / n_r²`.
    pub ratio: f64,
    /// Decimal exponent of `ratio`.
    pub order: i32,
    pub reduced: bool,
}

pub fn complexity_report(n_x: usize, n_r: usize) -> Result<ComplexityReport> {
    if n_x == 0 || n_r == 0 {
        return Err(Error::Config("state and ROM dimensions must be positive".into()));
    }
    let ratio = (n_x as f64).powi(4) / (n_r as f64).powi(2);
    let belief_dim = n_x + n_x * n_x;
    Ok(ComplexityReport {
        n_x,
        n_r,
        belief_dim,
        full_riccati: belief_dim,
        rom_riccati: n_r,
        ratio,
        order: ratio.log10().floor() as i32,
        reduced: n_r < n_x,
    })
}

impl fmt::Display for ComplexityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "state dimension n_x = {}", self.n_x)?;
        writeln!(f, "belief dimension n_x + n_x^2 = {}", self.belief_dim)?;
        writeln!(f, "reduced order n_r = {}", self.n_r)?;
        writeln!(
            f,
            "{} x {} vs {} x {} Riccati",
            self.full_riccati, self.full_riccati, self.rom_riccati, self.rom_riccati
        )?;
        writeln!(f, "ratio n_x^4 / n_r^2 = {:.1e} (O(10^{}))", self.ratio, self.order)?;
        if !self.reduced {
            writeln!(f, "no reduction in estimator/controller order")?;
        }
        Ok(())
    }
}

/// Riccati matrix sizes used by a design, for reporting next to the complexity summary.
pub fn riccati_sizes(design: &LqgDesign) -> [(usize, usize); 2] {
    let (s, p) = design.riccati_dims();
    [s, p]
}
