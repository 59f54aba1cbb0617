//! Open-loop trajectory optimization in belief space.
//!
//! Given the nominal observations generated by a noiseless rollout, the belief
//! dynamics are deterministic (for a fixed seed), so the nominal cost is an
//! ordinary function of the control sequence. It is minimized by gradient
//! descent with central finite-difference gradients evaluated under common
//! random numbers.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::{BeliefEngine, BeliefFilter, BeliefState, GaussianBelief};
use crate::error::{Error, Result};
use crate::linalg::{self, matrix_serde};
use crate::plant::{continue_noiseless, simulate_nominal, Plant};

/// Quadratic belief-space cost.
///
/// Stage `k`: `(μ−t)'Q(μ−t) + q_trace·tr Σ` (only for `k >= active_from`) plus `u'R u`;
/// terminal: `(μ_N−t)'Q_N(μ_N−t) + q_trace·tr Σ_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    q_mean: DMatrix<f64>,
    q_trace: f64,
    r_u: DMatrix<f64>,
    q_terminal: DMatrix<f64>,
    target: DVector<f64>,
    active_from: usize,
    q_diag: Option<DVector<f64>>,
    r_diag: Option<DVector<f64>>,
    qt_diag: Option<DVector<f64>>,
}

fn diagonal_of(m: &DMatrix<f64>) -> Option<DVector<f64>> {
    let off_diagonal_zero = (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] == 0.0));
    off_diagonal_zero.then(|| m.diagonal())
}

fn weighted(m: &DMatrix<f64>, diag: &Option<DVector<f64>>, v: &DVector<f64>) -> f64 {
    match diag {
        Some(d) => d.iter().zip(v.iter()).map(|(w, x)| w * x * x).sum(),
        None => linalg::quad_form(m, v),
    }
}

impl CostSpec {
    pub fn new(
        q_mean: DMatrix<f64>,
        q_trace: f64,
        r_u: DMatrix<f64>,
        q_terminal: DMatrix<f64>,
        target: DVector<f64>,
    ) -> Result<Self> {
        let n_x = target.len();
        if q_mean.shape() != (n_x, n_x) || q_terminal.shape() != (n_x, n_x) || !r_u.is_square() {
            return Err(Error::Dimension("cost weights do not match the target dimension".into()));
        }
        for (name, m) in [("Q_mean", &q_mean), ("Q_terminal", &q_terminal)] {
            if linalg::max_asymmetry(m) > 1e-10 || !linalg::is_psd(m, -1e-10) {
                return Err(Error::Config(format!("{name} must be symmetric PSD")));
            }
        }
        if linalg::max_asymmetry(&r_u) > 1e-10 || r_u.clone().cholesky().is_none() {
            return Err(Error::Config("R_u must be symmetric positive definite".into()));
        }
        if !(q_trace >= 0.0) {
            return Err(Error::Config("q_trace must be non-negative".into()));
        }
        Ok(Self {
            q_diag: diagonal_of(&q_mean),
            r_diag: diagonal_of(&r_u),
            qt_diag: diagonal_of(&q_terminal),
            q_mean,
            q_trace,
            r_u,
            q_terminal,
            target,
            active_from: 0,
        })
    }

    /// `q I`, `r I`, `q_terminal I` weights around a uniform target.
    pub fn isotropic(
        n_x: usize,
        n_u: usize,
        q: f64,
        q_trace: f64,
        r: f64,
        q_terminal: f64,
        target: f64,
    ) -> Result<Self> {
        Self::new(
            DMatrix::identity(n_x, n_x) * q,
            q_trace,
            DMatrix::identity(n_u, n_u) * r,
            DMatrix::identity(n_x, n_x) * q_terminal,
            DVector::from_element(n_x, target),
        )
    }

    /// Belief terms of stages before `k` are not charged (control terms always are).
    pub fn with_active_from(mut self, k: usize) -> Self {
        self.active_from = k;
        self
    }

    pub fn q_mean(&self) -> &DMatrix<f64> {
        &self.q_mean
    }
    pub fn q_trace(&self) -> f64 {
        self.q_trace
    }
    pub fn r_u(&self) -> &DMatrix<f64> {
        &self.r_u
    }
    pub fn q_terminal(&self) -> &DMatrix<f64> {
        &self.q_terminal
    }
    pub fn target(&self) -> &DVector<f64> {
        &self.target
    }
    pub fn active_from(&self) -> usize {
        self.active_from
    }
    pub fn n_x(&self) -> usize {
        self.target.len()
    }
    pub fn n_u(&self) -> usize {
        self.r_u.nrows()
    }

    pub fn stage_cost(&self, k: usize, mean: &DVector<f64>, cov_trace: f64, control: &DVector<f64>) -> f64 {
        let belief_term = if k >= self.active_from {
            weighted(&self.q_mean, &self.q_diag, &(mean - &self.target)) + self.q_trace * cov_trace
        } else {
            0.0
        };
        belief_term + weighted(&self.r_u, &self.r_diag, control)
    }

    pub fn terminal_cost(&self, mean: &DVector<f64>, cov_trace: f64) -> f64 {
        weighted(&self.q_terminal, &self.qt_diag, &(mean - &self.target)) + self.q_trace * cov_trace
    }
}

/// Serializable description of an isotropic [`CostSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostConfig {
    pub q_mean: f64,
    pub q_trace: f64,
    pub r_u: f64,
    pub q_terminal: f64,
    pub target: f64,
    /// First step whose belief term is charged.
    pub active_from: usize,
}

impl Default for CostConfig {
    fn default() -> Self {
        // Per-node averaged tracking error over t >= 25 s, tiny control weight.
        Self {
            q_mean: 0.01,
            q_trace: 0.0,
            r_u: 1e-6,
            q_terminal: 0.01,
            target: 150.0,
            active_from: 100,
        }
    }
}

impl CostConfig {
    pub fn build(&self, n_x: usize, n_u: usize) -> Result<CostSpec> {
        Ok(CostSpec::isotropic(
            n_x,
            n_u,
            self.q_mean,
            self.q_trace,
            self.r_u,
            self.q_terminal,
            self.target,
        )?
        .with_active_from(self.active_from))
    }
}

/// Optimized nominal control, belief and observation sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NominalTrajectory {
    #[serde(with = "matrix_serde::vectors")]
    pub controls: Vec<DVector<f64>>,
    #[serde(with = "matrix_serde::vectors")]
    pub means: Vec<DVector<f64>>,
    #[serde(with = "matrix_serde::matrices")]
    pub covs: Vec<DMatrix<f64>>,
    #[serde(with = "matrix_serde::vectors")]
    pub observations: Vec<DVector<f64>>,
    pub nominal_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Accepted nominal cost per iteration, starting with the initial guess.
    #[serde(default)]
    pub cost_history: Vec<f64>,
}

impl NominalTrajectory {
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    pub fn beliefs(&self) -> Result<Vec<GaussianBelief>> {
        self.means
            .iter()
            .zip(&self.covs)
            .map(|(m, c)| GaussianBelief::new(m.clone(), c.clone()))
            .collect()
    }

    pub fn initial_belief(&self) -> Result<GaussianBelief> {
        GaussianBelief::new(self.means[0].clone(), self.covs[0].clone())
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let nominal: Self = serde_json::from_reader(file)?;
        nominal.validate()?;
        Ok(nominal)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.controls.len();
        if n == 0 || self.means.len() != n + 1 || self.covs.len() != n + 1 || self.observations.len() != n + 1 {
            return Err(Error::Dimension(
                "nominal trajectory needs N controls and N+1 means/covs/observations".into(),
            ));
        }
        if !self.nominal_cost.is_finite() {
            return Err(Error::Config("nominal cost is not finite".into()));
        }
        Ok(())
    }
}

/// `J̄ = Σ c_k(b_k, u_k) + c_N(b_N)`.
pub fn nominal_cost(beliefs: &[GaussianBelief], controls: &[DVector<f64>], spec: &CostSpec) -> Result<f64> {
    if beliefs.len() != controls.len() + 1 {
        return Err(Error::Dimension(format!(
            "{} beliefs for {} controls",
            beliefs.len(),
            controls.len()
        )));
    }
    if beliefs.iter().any(|b| b.dim() != spec.n_x()) || controls.iter().any(|u| u.len() != spec.n_u()) {
        return Err(Error::Dimension("belief or control dimension does not match cost".into()));
    }
    let mut total = 0.0;
    for (k, (b, u)) in beliefs.iter().zip(controls).enumerate() {
        total += spec.stage_cost(k, b.mean(), b.cov().trace(), u);
    }
    let last = beliefs.last().expect("non-empty");
    Ok(total + spec.terminal_cost(last.mean(), last.cov().trace()))
}

/// One deterministic belief rollout, kept around so that finite-difference
/// perturbations can restart from the time of the perturbed control.
struct BeliefRun {
    nominal_states: Vec<DVector<f64>>,
    observations: Vec<DVector<f64>>,
    states: Vec<BeliefState>,
    means: Vec<DVector<f64>>,
    traces: Vec<f64>,
}

impl BeliefRun {
    fn cost_from(&self, start: usize, controls: &[DVector<f64>], spec: &CostSpec) -> f64 {
        let n = controls.len();
        let mut total = 0.0;
        for k in start..n {
            total += spec.stage_cost(k, &self.means[k], self.traces[k], &controls[k]);
        }
        total + spec.terminal_cost(&self.means[n], self.traces[n])
    }
}

fn run_beliefs<P: Plant + ?Sized>(
    plant: &P,
    b0: &GaussianBelief,
    controls: &[DVector<f64>],
    engine: BeliefEngine,
    seed: u64,
) -> Result<BeliefRun> {
    let nominal = simulate_nominal(plant, b0.mean(), controls)?;
    let filter = BeliefFilter::new(plant, engine, seed)?;
    let mut state = filter.init(b0)?;
    let mut states = Vec::with_capacity(controls.len() + 1);
    let mut means = vec![b0.mean().clone()];
    let mut traces = vec![b0.cov().trace()];
    for (k, u) in controls.iter().enumerate() {
        let predicted = filter.predict(&state, k, u)?;
        let next = filter.update(&predicted, k + 1, &nominal.observations[k + 1])?;
        states.push(std::mem::replace(&mut state, next));
        means.push(state.mean());
        traces.push(state.cov_trace());
    }
    states.push(state);
    Ok(BeliefRun {
        nominal_states: nominal.states,
        observations: nominal.observations,
        states,
        means,
        traces,
    })
}

/// Cost of `controls` that agree with the base run before `start`, counting only stages `>= start`.
fn suffix_cost<P: Plant + ?Sized>(
    plant: &P,
    base: &BeliefRun,
    start: usize,
    controls: &[DVector<f64>],
    spec: &CostSpec,
    filter: &BeliefFilter<'_, P>,
) -> Result<f64> {
    let n = controls.len();
    let ybar = continue_noiseless(plant, start, &base.nominal_states[start], controls)?;
    let mut state = base.states[start].clone();
    let mut total = spec.stage_cost(start, &base.means[start], base.traces[start], &controls[start]);
    for k in start..n {
        let predicted = filter.predict(&state, k, &controls[k])?;
        state = filter.update(&predicted, k + 1, &ybar[k - start])?;
        let (mean, trace) = (state.mean(), state.cov_trace());
        total += if k + 1 < n {
            spec.stage_cost(k + 1, &mean, trace, &controls[k + 1])
        } else {
            spec.terminal_cost(&mean, trace)
        };
    }
    Ok(total)
}

fn check_controls(controls: &[DVector<f64>], n: usize, n_u: usize) -> Result<()> {
    if controls.len() != n {
        return Err(Error::Dimension(format!("{} controls for a horizon of {n}", controls.len())));
    }
    if controls.iter().any(|u| u.len() != n_u) {
        return Err(Error::Dimension(format!("controls must have length {n_u}")));
    }
    Ok(())
}

/// Deterministic belief sequence `b_0 .. b_N` for a control sequence.
pub fn rollout_belief<P: Plant + ?Sized>(
    controls: &[DVector<f64>],
    b0: &GaussianBelief,
    plant: &P,
    engine: BeliefEngine,
    seed: u64,
) -> Result<Vec<GaussianBelief>> {
    check_controls(controls, plant.spec().horizon, plant.spec().n_u)?;
    let run = run_beliefs(plant, b0, controls, engine, seed)?;
    let mut beliefs = Vec::with_capacity(run.states.len());
    beliefs.push(b0.clone());
    for s in &run.states[1..] {
        beliefs.push(s.to_gaussian()?);
    }
    Ok(beliefs)
}

fn gradient_from_base<P: Plant + ?Sized>(
    plant: &P,
    base: &BeliefRun,
    controls: &[DVector<f64>],
    spec: &CostSpec,
    h: f64,
    engine: BeliefEngine,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    let n_u = plant.spec().n_u;
    let filter = BeliefFilter::new(plant, engine, seed)?;
    let entries: Vec<(usize, usize)> = (0..controls.len())
        .flat_map(|k| (0..n_u).map(move |m| (k, m)))
        .collect();
    let partials = entries
        .par_iter()
        .map(|&(k, m)| {
            let mut perturbed = controls.to_vec();
            perturbed[k][m] = controls[k][m] + h;
            let plus = suffix_cost(plant, base, k, &perturbed, spec, &filter);
            perturbed[k][m] = controls[k][m] - h;
            let minus = suffix_cost(plant, base, k, &perturbed, spec, &filter);
            match (plus, minus) {
                (Ok(p), Ok(q)) if p.is_finite() && q.is_finite() => Ok((p - q) / (2.0 * h)),
                _ => Err(Error::Gradient { step: k, channel: m }),
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(partials.chunks(n_u).map(DVector::from_column_slice).collect())
}

/// Central-difference gradient `∇_U J̄` with common random numbers: the
/// `+h` and `−h` rollouts reuse the same seed, so sampling noise cancels.
pub fn gradient_fd<P: Plant + ?Sized>(
    controls: &[DVector<f64>],
    b0: &GaussianBelief,
    plant: &P,
    spec: &CostSpec,
    h: f64,
    engine: BeliefEngine,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }
    check_controls(controls, plant.spec().horizon, plant.spec().n_u)?;
    let base = run_beliefs(plant, b0, controls, engine, seed)?;
    gradient_from_base(plant, &base, controls, spec, h, engine, seed)
}

/// Gradient-descent settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeOptions {
    /// Initial step size, restored at every iteration before backtracking.
    pub alpha: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// Central-difference step.
    pub fd_step: f64,
    pub engine: BeliefEngine,
    pub seed: u64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            max_iters: 200,
            tol: 1e-4,
            fd_step: 1e-3,
            engine: BeliefEngine::ensemble(100),
            seed: 0,
        }
    }
}

const MAX_HALVINGS: usize = 40;

/// `U ← U − α ∇_U J̄` with step halving until the cost decreases.
///
/// Stops when the relative cost change or the gradient norm falls below
/// `tol`, or when backtracking can no longer find a decrease. Hitting
/// `max_iters` returns the best iterate with `converged = false`.
pub fn optimize<P: Plant + ?Sized>(
    u_init: &[DVector<f64>],
    b0: &GaussianBelief,
    plant: &P,
    spec: &CostSpec,
    opts: &OptimizeOptions,
) -> Result<NominalTrajectory> {
    check_controls(u_init, plant.spec().horizon, plant.spec().n_u)?;
    if !(opts.alpha > 0.0) || !(opts.fd_step > 0.0) {
        return Err(Error::Config("alpha and fd_step must be positive".into()));
    }
    let mut controls = u_init.to_vec();
    let mut run = run_beliefs(plant, b0, &controls, opts.engine, opts.seed)?;
    let mut cost = run.cost_from(0, &controls, spec);
    let mut history = vec![cost];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iters {
        let grad = gradient_from_base(plant, &run, &controls, spec, opts.fd_step, opts.engine, opts.seed)?;
        let grad_norm = grad.iter().map(|g| g.norm_squared()).sum::<f64>().sqrt();
        if grad_norm <= opts.tol {
            converged = true;
            break;
        }
        let mut alpha = opts.alpha;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let candidate: Vec<DVector<f64>> =
                controls.iter().zip(&grad).map(|(u, g)| u - g * alpha).collect();
            if let Ok(trial) = run_beliefs(plant, b0, &candidate, opts.engine, opts.seed) {
                let trial_cost = trial.cost_from(0, &candidate, spec);
                if trial_cost < cost {
                    accepted = Some((candidate, trial, trial_cost));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((candidate, trial, trial_cost)) = accepted else {
            // no descent left at finite-difference precision
            converged = true;
            break;
        };
        iterations += 1;
        let change = (cost - trial_cost).abs();
        let previous = cost;
        controls = candidate;
        run = trial;
        cost = trial_cost;
        history.push(cost);
        if change <= opts.tol * (1.0 + previous.abs()) {
            converged = true;
            break;
        }
    }

    let mut covs = Vec::with_capacity(run.states.len());
    covs.push(b0.cov().clone());
    for s in &run.states[1..] {
        covs.push(s.to_gaussian()?.into_parts().1);
    }
    let beliefs: Vec<GaussianBelief> = run
        .means
        .iter()
        .zip(&covs)
        .map(|(m, c)| GaussianBelief::new(m.clone(), c.clone()))
        .collect::<Result<_>>()?;
    let nominal_cost = nominal_cost(&beliefs, &controls, spec)?;
    Ok(NominalTrajectory {
        means: run.means,
        covs: beliefs.into_iter().map(|b| b.into_parts().1).collect(),
        observations: run.observations,
        controls,
        nominal_cost,
        iterations,
        converged,
        cost_history: history,
    })
}
