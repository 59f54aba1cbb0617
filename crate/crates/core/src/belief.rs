//! Gaussian beliefs and the stochastic (perturbed-observation) ensemble Kalman filter.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::plant::Plant;
use crate::rng::{Channel, GaussianSampler, StreamKey};

/// Belief `b = (μ, Σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianBelief {
    /// Re-symmetrizes `cov` and floors negative eigenvalues.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.shape() != (mean.len(), mean.len()) {
            return Err(Error::Dimension(format!(
                "covariance {:?} does not match mean of length {}",
                cov.shape(),
                mean.len()
            )));
        }
        if !linalg::is_finite_vec(&mean) || !linalg::is_finite_mat(&cov) {
            return Err(Error::Config("belief must be finite".into()));
        }
        Ok(Self {
            cov: linalg::floor_psd(&cov),
            mean,
        })
    }

    /// Point-mass belief (zero covariance).
    pub fn deterministic(mean: DVector<f64>) -> Self {
        let n = mean.len();
        Self {
            mean,
            cov: DMatrix::zeros(n, n),
        }
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn into_parts(self) -> (DVector<f64>, DMatrix<f64>) {
        (self.mean, self.cov)
    }
}

/// Particle representation of a belief; one column per member.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: DMatrix<f64>,
}

impl Ensemble {
    pub fn from_members(members: DMatrix<f64>) -> Result<Self> {
        if members.ncols() < 2 {
            return Err(Error::InsufficientEnsemble(members.ncols()));
        }
        if !linalg::is_finite_mat(&members) {
            return Err(Error::Config("ensemble members must be finite".into()));
        }
        Ok(Self { members })
    }

    /// Draws `size` members from `belief`; member `i` uses its own stream.
    pub fn sample(belief: &GaussianBelief, size: usize, seed: u64) -> Result<Self> {
        if size < 2 {
            return Err(Error::InsufficientEnsemble(size));
        }
        let sampler = GaussianSampler::new(belief.cov());
        let key = StreamKey::new(seed, Channel::EnsembleInit);
        let mut members = DMatrix::zeros(belief.dim(), size);
        for i in 0..size {
            let draw = belief.mean() + sampler.sample(&mut key.rng(0, i as u64));
            members.set_column(i, &draw);
        }
        Ok(Self { members })
    }

    pub fn size(&self) -> usize {
        self.members.ncols()
    }

    pub fn dim(&self) -> usize {
        self.members.nrows()
    }

    pub fn members(&self) -> &DMatrix<f64> {
        &self.members
    }

    fn column(&self, i: usize) -> &[f64] {
        let n = self.dim();
        &self.members.as_slice()[i * n..(i + 1) * n]
    }

    pub fn member(&self, i: usize) -> DVector<f64> {
        DVector::from_column_slice(self.column(i))
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut mean = vec![0.0; self.dim()];
        for i in 0..self.size() {
            for (acc, x) in mean.iter_mut().zip(self.column(i)) {
                *acc += x;
            }
        }
        let scale = 1.0 / self.size() as f64;
        DVector::from_iterator(mean.len(), mean.into_iter().map(|v| v * scale))
    }

    /// Trace of the unbiased sample covariance.
    pub fn cov_trace(&self) -> f64 {
        let mean = self.mean();
        let mut total = 0.0;
        for i in 0..self.size() {
            total += self
                .column(i)
                .iter()
                .zip(mean.iter())
                .map(|(x, m)| (x - m) * (x - m))
                .sum::<f64>();
        }
        total / (self.size() as f64 - 1.0)
    }

    fn anomalies(&self) -> (DVector<f64>, DMatrix<f64>) {
        let mean = self.mean();
        let mut dev = self.members.clone();
        let n = self.dim();
        for col in dev.as_mut_slice().chunks_exact_mut(n) {
            for (d, m) in col.iter_mut().zip(mean.iter()) {
                *d -= m;
            }
        }
        (mean, dev)
    }
}

/// EnKF tuning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnkfOptions {
    /// Multiplicative inflation applied to forecast anomalies (1.0 = none).
    pub inflation: f64,
}

impl Default for EnkfOptions {
    fn default() -> Self {
        Self { inflation: 1.0 }
    }
}

/// Propagates every member through `plant.step` with its own draw `w ~ N(0, W)`.
pub fn enkf_predict<P: Plant + ?Sized>(
    ens: &Ensemble,
    k: usize,
    control: &DVector<f64>,
    plant: &P,
    seed: u64,
    opts: EnkfOptions,
) -> Result<Ensemble> {
    if !linalg::is_finite_vec(control) {
        return Err(Error::Config(format!("non-finite control at step {k}")));
    }
    let sampler = GaussianSampler::new(&plant.spec().process_noise);
    predict_members(ens, k, control, plant, &sampler, seed, opts)
}

fn predict_members<P: Plant + ?Sized>(
    ens: &Ensemble,
    k: usize,
    control: &DVector<f64>,
    plant: &P,
    sampler: &GaussianSampler,
    seed: u64,
    opts: EnkfOptions,
) -> Result<Ensemble> {
    let mut rng = StreamKey::new(seed, Channel::EnsemblePredict).rng(k as u64, 0);
    let mut next = DMatrix::zeros(ens.dim(), ens.size());
    for i in 0..ens.size() {
        let w = sampler.sample(&mut rng);
        let x = plant.step(k, &ens.member(i), control, &w)?;
        next.column_mut(i).copy_from_slice(x.as_slice());
    }
    let mut out = Ensemble { members: next };
    if opts.inflation != 1.0 {
        let (mean, dev) = out.anomalies();
        for (i, d) in dev.column_iter().enumerate() {
            out.members.set_column(i, &(&mean + d * opts.inflation));
        }
    }
    Ok(out)
}

/// Perturbed-observation update against `measurement` taken at time `k`.
pub fn enkf_update<P: Plant + ?Sized>(
    ens: &Ensemble,
    k: usize,
    measurement: &DVector<f64>,
    plant: &P,
    seed: u64,
) -> Result<Ensemble> {
    let spec = plant.spec();
    if measurement.len() != spec.n_y {
        return Err(Error::Dimension(format!(
            "measurement has length {}, expected {}",
            measurement.len(),
            spec.n_y
        )));
    }
    if !linalg::is_finite_vec(measurement) {
        return Err(Error::Config(format!("non-finite measurement at step {k}")));
    }
    let sampler = GaussianSampler::new(&spec.measurement_noise);
    update_members(ens, k, measurement, plant, &sampler, seed)
}

fn update_members<P: Plant + ?Sized>(
    ens: &Ensemble,
    k: usize,
    measurement: &DVector<f64>,
    plant: &P,
    sampler: &GaussianSampler,
    seed: u64,
) -> Result<Ensemble> {
    let spec = plant.spec();
    let (n, m, ny) = (ens.dim(), ens.size(), spec.n_y);
    let v0 = DVector::zeros(ny);
    let mut predicted = DMatrix::zeros(ny, m);
    for i in 0..m {
        predicted.set_column(i, &plant.observe(k, &ens.member(i), &v0)?);
    }
    let x_mean = ens.mean();
    let y_mean = predicted.column_mean();
    let mut y_dev = predicted.clone();
    for mut c in y_dev.column_iter_mut() {
        c -= &y_mean;
    }
    let denom = (m - 1) as f64;
    // P_xy (n × n_y) accumulated column by column over contiguous member slices
    let mut p_xy = DMatrix::<f64>::zeros(n, ny);
    for i in 0..m {
        let x = ens.column(i);
        for r in 0..ny {
            let w = y_dev[(r, i)] / denom;
            let mut col = p_xy.column_mut(r);
            for ((p, xi), mi) in col.as_mut_slice().iter_mut().zip(x).zip(x_mean.iter()) {
                *p += w * (xi - mi);
            }
        }
    }
    let p_yy = &y_dev * y_dev.transpose() / denom;
    let innovation_cov = linalg::symmetrize(&(p_yy + &spec.measurement_noise));
    let chol = innovation_cov
        .cholesky()
        .ok_or(Error::FilterDegenerate { step: k })?;

    let mut rng = StreamKey::new(seed, Channel::EnsembleUpdate).rng(k as u64, 0);
    let mut innovations = DMatrix::zeros(ny, m);
    for i in 0..m {
        let v = sampler.sample(&mut rng);
        innovations.set_column(i, &(measurement + v - predicted.column(i)));
    }
    // members + P_xy S⁻¹ innovations, with the small solve done first
    let weights: DMatrix<f64> = chol.solve(&innovations);
    let mut members = ens.members.clone();
    for (i, col) in members.as_mut_slice().chunks_exact_mut(n).enumerate() {
        for r in 0..ny {
            let w = weights[(r, i)];
            for (x, p) in col.iter_mut().zip(p_xy.column(r).as_slice()) {
                *x += w * p;
            }
        }
        if col.iter().any(|x| !x.is_finite()) {
            return Err(Error::FilterDegenerate { step: k });
        }
    }
    Ok(Ensemble { members })
}

/// Sample mean and unbiased sample covariance.
pub fn belief_from_ensemble(ens: &Ensemble) -> Result<GaussianBelief> {
    let m = ens.size();
    if m < 2 {
        return Err(Error::InsufficientEnsemble(m));
    }
    let (mean, dev) = ens.anomalies();
    let cov = linalg::symmetrize(&(&dev * dev.transpose() / (m - 1) as f64));
    Ok(GaussianBelief { mean, cov })
}

/// How beliefs are propagated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BeliefEngine {
    /// Stochastic EnKF (the black-box default).
    Ensemble { members: usize, options: EnkfOptions },
    /// Exact Kalman filter; only valid for plants exposing a linear model.
    ExactKalman,
}

impl BeliefEngine {
    pub fn ensemble(members: usize) -> Self {
        Self::Ensemble {
            members,
            options: EnkfOptions::default(),
        }
    }
}

/// Running filter state for either engine.
#[derive(Debug, Clone)]
pub enum BeliefState {
    Ensemble(Ensemble),
    Gaussian(GaussianBelief),
}

impl BeliefState {
    pub fn mean(&self) -> DVector<f64> {
        match self {
            BeliefState::Ensemble(e) => e.mean(),
            BeliefState::Gaussian(g) => g.mean().clone(),
        }
    }

    pub fn cov_trace(&self) -> f64 {
        match self {
            BeliefState::Ensemble(e) => e.cov_trace(),
            BeliefState::Gaussian(g) => g.cov().trace(),
        }
    }

    pub fn to_gaussian(&self) -> Result<GaussianBelief> {
        match self {
            BeliefState::Ensemble(e) => belief_from_ensemble(e),
            BeliefState::Gaussian(g) => Ok(g.clone()),
        }
    }
}

/// Belief dynamics `b_{k+1} = τ(b_k, u_k, y_{k+1})` for one plant and one seed.
pub struct BeliefFilter<'a, P: Plant + ?Sized> {
    plant: &'a P,
    engine: BeliefEngine,
    seed: u64,
    process: GaussianSampler,
    measurement: GaussianSampler,
}

impl<'a, P: Plant + ?Sized> BeliefFilter<'a, P> {
    pub fn new(plant: &'a P, engine: BeliefEngine, seed: u64) -> Result<Self> {
        match engine {
            BeliefEngine::ExactKalman if plant.as_linear().is_none() => Err(Error::Config(
                "exact Kalman belief engine requires a linear plant".into(),
            )),
            BeliefEngine::Ensemble { members, .. } if members < 2 => {
                Err(Error::InsufficientEnsemble(members))
            }
            _ => Ok(Self {
                plant,
                engine,
                seed,
                process: GaussianSampler::new(&plant.spec().process_noise),
                measurement: GaussianSampler::new(&plant.spec().measurement_noise),
            }),
        }
    }

    pub fn init(&self, b0: &GaussianBelief) -> Result<BeliefState> {
        match self.engine {
            BeliefEngine::Ensemble { members, .. } => {
                Ok(BeliefState::Ensemble(Ensemble::sample(b0, members, self.seed)?))
            }
            BeliefEngine::ExactKalman => Ok(BeliefState::Gaussian(b0.clone())),
        }
    }

    pub fn predict(&self, state: &BeliefState, k: usize, control: &DVector<f64>) -> Result<BeliefState> {
        match (state, self.engine) {
            (BeliefState::Ensemble(e), BeliefEngine::Ensemble { options, .. }) => {
                if !linalg::is_finite_vec(control) {
                    return Err(Error::Config(format!("non-finite control at step {k}")));
                }
                let next = predict_members(e, k, control, self.plant, &self.process, self.seed, options)?;
                Ok(BeliefState::Ensemble(next))
            }
            (BeliefState::Gaussian(g), BeliefEngine::ExactKalman) => {
                let lin = self.plant.as_linear().expect("checked at construction");
                let (a, b) = (lin.a(k), lin.b(k));
                let mean = a * g.mean() + b * control;
                let cov = a * g.cov() * a.transpose()
                    + b * &self.plant.spec().process_noise * b.transpose();
                if !linalg::is_finite_vec(&mean) {
                    return Err(Error::Diverged { step: k });
                }
                Ok(BeliefState::Gaussian(GaussianBelief {
                    mean,
                    cov: linalg::symmetrize(&cov),
                }))
            }
            _ => Err(Error::Config("belief state does not match engine".into())),
        }
    }

    pub fn update(&self, state: &BeliefState, k: usize, measurement: &DVector<f64>) -> Result<BeliefState> {
        match (state, self.engine) {
            (BeliefState::Ensemble(e), BeliefEngine::Ensemble { .. }) => {
                if measurement.len() != self.plant.spec().n_y || !linalg::is_finite_vec(measurement) {
                    return Err(Error::Dimension(format!("invalid measurement at step {k}")));
                }
                let next = update_members(e, k, measurement, self.plant, &self.measurement, self.seed)?;
                Ok(BeliefState::Ensemble(next))
            }
            (BeliefState::Gaussian(g), BeliefEngine::ExactKalman) => {
                let lin = self.plant.as_linear().expect("checked at construction");
                let c = lin.c(k);
                let v = &self.plant.spec().measurement_noise;
                let s = linalg::symmetrize(&(c * g.cov() * c.transpose() + v));
                let chol = s.cholesky().ok_or(Error::DegenerateMeasurement { step: k })?;
                let gain = chol.solve(&(c * g.cov())).transpose();
                let mean = g.mean() + &gain * (measurement - c * g.mean());
                let n = g.dim();
                let i_kc = DMatrix::identity(n, n) - &gain * c;
                let cov = &i_kc * g.cov() * i_kc.transpose() + &gain * v * gain.transpose();
                Ok(BeliefState::Gaussian(GaussianBelief {
                    mean,
                    cov: linalg::symmetrize(&cov),
                }))
            }
            _ => Err(Error::Config("belief state does not match engine".into())),
        }
    }
}
