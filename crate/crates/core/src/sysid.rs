//! Identification of the perturbation system around a nominal trajectory.
//!
//! Impulse experiments on the black-box plant give the time-varying Markov
//! parameters `C_k Φ(k, j+1) B_j`; the time-varying eigensystem realization
//! algorithm turns them into a reduced-order LTV model `(Â_k, B̂_k, Ĉ_k)`.
//!
//! Each time `k` has its own generalized Hankel matrix
//! `H_k[i, l] = Y(k+i, k-1-l)` which factors as `O_k R_k` (observability of
//! the state at `k` times controllability into it). The SVD factors of `H_k`
//! fix the ROM coordinates at time `k`; `Â_k` maps those into the coordinates
//! of `k+1` through the shifted Hankel `Y(k+1+i, k-1-l) = O_{k+1} A_k R_k`.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, matrix_serde, RelativeError};
use crate::plant::{continue_noiseless, simulate_nominal, Plant};
use crate::rng::{Channel, GaussianSampler, StreamKey};
use crate::trajopt::NominalTrajectory;

/// Impulse-response matrices `Y(k, j)` (n_y × n_u) for `0 <= j <= k <= N`,
/// with `Y(k, k) = 0` (no feedthrough).
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovParams {
    n_y: usize,
    n_u: usize,
    params: Vec<Vec<DMatrix<f64>>>,
}

impl MarkovParams {
    pub fn zeros(n_y: usize, n_u: usize, horizon: usize) -> Self {
        let params = (0..=horizon)
            .map(|k| vec![DMatrix::zeros(n_y, n_u); k + 1])
            .collect();
        Self { n_y, n_u, params }
    }

    /// Builds the table from a closure, e.g. an analytic model.
    pub fn from_fn(n_y: usize, n_u: usize, horizon: usize, f: impl Fn(usize, usize) -> DMatrix<f64>) -> Self {
        let mut out = Self::zeros(n_y, n_u, horizon);
        for k in 1..=horizon {
            for j in 0..k {
                out.params[k][j] = f(k, j);
            }
        }
        out
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    /// Horizon `N`.
    pub fn horizon(&self) -> usize {
        self.params.len() - 1
    }

    pub fn get(&self, k: usize, j: usize) -> &DMatrix<f64> {
        &self.params[k][j]
    }

    pub fn set(&mut self, k: usize, j: usize, value: DMatrix<f64>) -> Result<()> {
        if j >= k || k > self.horizon() {
            return Err(Error::Index(format!("Markov parameter ({k}, {j}) outside 0 <= j < k <= N")));
        }
        if value.shape() != (self.n_y, self.n_u) {
            return Err(Error::Dimension(format!("Markov parameter must be {}x{}", self.n_y, self.n_u)));
        }
        self.params[k][j] = value;
        Ok(())
    }

    fn hankel(&self, row_start: usize, rows: usize, col_start: usize, cols: usize) -> DMatrix<f64> {
        let (ny, nu) = (self.n_y, self.n_u);
        let mut h = DMatrix::zeros(rows * ny, cols * nu);
        for i in 0..rows {
            for l in 0..cols {
                h.view_mut((i * ny, l * nu), (ny, nu))
                    .copy_from(self.get(row_start + i, col_start - l));
            }
        }
        h
    }
}

/// Options of the impulse experiments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpulseOptions {
    pub epsilon: f64,
    /// `Some((repeats, seed))` runs each experiment under process and
    /// measurement noise, pairs it with an equally-noisy baseline and averages.
    pub noisy: Option<(usize, u64)>,
}

impl Default for ImpulseOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-2,
            noisy: None,
        }
    }
}

/// Runs one perturbed noiseless rollout per input channel and time:
/// `Y(k, j)[:, m] = (y_k(ū + ε e_m δ_j) − ȳ_k) / ε`.
pub fn collect_impulse_responses<P: Plant + ?Sized>(
    plant: &P,
    nominal: &NominalTrajectory,
    epsilon: f64,
) -> Result<MarkovParams> {
    collect_impulse_responses_with(
        plant,
        nominal,
        &ImpulseOptions {
            epsilon,
            noisy: None,
        },
    )
}

pub fn collect_impulse_responses_with<P: Plant + ?Sized>(
    plant: &P,
    nominal: &NominalTrajectory,
    opts: &ImpulseOptions,
) -> Result<MarkovParams> {
    let spec = plant.spec();
    let eps = opts.epsilon;
    if !(eps > 0.0) {
        return Err(Error::Config(format!("impulse magnitude must be positive, got {eps}")));
    }
    nominal.validate()?;
    let n = nominal.horizon();
    if n != spec.horizon || nominal.controls[0].len() != spec.n_u {
        return Err(Error::Dimension("nominal trajectory does not match plant".into()));
    }
    let entries: Vec<(usize, usize)> = (0..n).flat_map(|j| (0..spec.n_u).map(move |m| (j, m))).collect();
    let columns: Vec<Vec<DVector<f64>>> = match opts.noisy {
        None => {
            let base = simulate_nominal(plant, &nominal.means[0], &nominal.controls)?;
            entries
                .par_iter()
                .map(|&(j, m)| {
                    let mut u = nominal.controls.clone();
                    u[j][m] += eps;
                    let ys = continue_noiseless(plant, j, &base.states[j], &u)
                        .map_err(|_| Error::ImpulseDiverged { step: j, channel: m })?;
                    let cols: Vec<DVector<f64>> = ys
                        .iter()
                        .enumerate()
                        .map(|(i, y)| (y - &base.observations[j + 1 + i]) / eps)
                        .collect();
                    if cols.iter().any(|c| !linalg::is_finite_vec(c)) {
                        return Err(Error::ImpulseDiverged { step: j, channel: m });
                    }
                    Ok(cols)
                })
                .collect::<Result<_>>()?
        }
        Some((repeats, seed)) => {
            if repeats == 0 {
                return Err(Error::Config("noisy impulse mode needs at least one repeat".into()));
            }
            entries
                .par_iter()
                .map(|&(j, m)| {
                    let mut acc = vec![DVector::zeros(spec.n_y); n - j];
                    for r in 0..repeats {
                        let base = noisy_rollout(plant, nominal, &nominal.controls, seed, r)?;
                        let mut u = nominal.controls.clone();
                        u[j][m] += eps;
                        let pert = noisy_rollout(plant, nominal, &u, seed, r)
                            .map_err(|_| Error::ImpulseDiverged { step: j, channel: m })?;
                        for (i, a) in acc.iter_mut().enumerate() {
                            *a += (&pert[j + 1 + i] - &base[j + 1 + i]) / (eps * repeats as f64);
                        }
                    }
                    Ok(acc)
                })
                .collect::<Result<_>>()?
        }
    };

    let mut out = MarkovParams::zeros(spec.n_y, spec.n_u, n);
    for (&(j, m), cols) in entries.iter().zip(&columns) {
        for (i, c) in cols.iter().enumerate() {
            out.params[j + 1 + i][j].set_column(m, c);
        }
    }
    Ok(out)
}

fn noisy_rollout<P: Plant + ?Sized>(
    plant: &P,
    nominal: &NominalTrajectory,
    controls: &[DVector<f64>],
    seed: u64,
    repeat: usize,
) -> Result<Vec<DVector<f64>>> {
    let spec = plant.spec();
    let w = GaussianSampler::new(&spec.process_noise);
    let v = GaussianSampler::new(&spec.measurement_noise);
    let wk = StreamKey::new(seed, Channel::ProcessNoise);
    let vk = StreamKey::new(seed, Channel::MeasurementNoise);
    let mut x = nominal.means[0].clone();
    let mut ys = vec![plant.observe(0, &x, &v.sample(&mut vk.rng(repeat as u64, 0)))?];
    for (k, u) in controls.iter().enumerate() {
        x = plant.step(k, &x, u, &w.sample(&mut wk.rng(repeat as u64, k as u64)))?;
        ys.push(plant.observe(k + 1, &x, &v.sample(&mut vk.rng(repeat as u64, k as u64 + 1)))?);
    }
    Ok(ys)
}

/// Identified reduced-order LTV model. Outside `time_range` the nearest valid
/// matrices are held.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtvRom {
    /// Â_k, k = 0..N-1.
    #[serde(with = "matrix_serde::matrices")]
    pub a_hat: Vec<DMatrix<f64>>,
    /// B̂_k, k = 0..N-1.
    #[serde(with = "matrix_serde::matrices")]
    pub b_hat: Vec<DMatrix<f64>>,
    /// Ĉ_k, k = 0..N.
    #[serde(with = "matrix_serde::matrices")]
    pub c_hat: Vec<DMatrix<f64>>,
    pub n_r: usize,
    /// Steps `[k_min, k_max]` whose Hankel matrices could be formed.
    pub time_range: [usize; 2],
    /// Retained Hankel spectrum per step (empty outside `time_range`).
    pub singular_values: Vec<Vec<f64>>,
    pub p: usize,
    pub q: usize,
    /// Set when some step has `s_{n_r+1} / s_1 > 0.5`.
    pub gap_warning: bool,
}

impl LtvRom {
    pub fn horizon(&self) -> usize {
        self.a_hat.len()
    }

    pub fn n_y(&self) -> usize {
        self.c_hat[0].nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b_hat[0].ncols()
    }

    /// Wraps known matrices as a ROM (full validity range). Useful when the
    /// true linear model is available.
    pub fn from_matrices(a: Vec<DMatrix<f64>>, b: Vec<DMatrix<f64>>, c: Vec<DMatrix<f64>>) -> Result<Self> {
        let n = a.len();
        if n == 0 || b.len() != n || c.len() != n + 1 {
            return Err(Error::Dimension("ROM needs N A/B matrices and N+1 C matrices".into()));
        }
        let n_r = a[0].nrows();
        Ok(Self {
            a_hat: a,
            b_hat: b,
            c_hat: c,
            n_r,
            time_range: [0, n],
            singular_values: vec![Vec::new(); n + 1],
            p: 0,
            q: 0,
            gap_warning: false,
        })
    }

    /// Model Markov parameter `Ĉ_k Â_{k-1} ... Â_{j+1} B̂_j`.
    pub fn markov(&self, k: usize, j: usize) -> DMatrix<f64> {
        if j >= k {
            return DMatrix::zeros(self.n_y(), self.n_u());
        }
        let mut phi = self.b_hat[j].clone();
        for i in j + 1..k {
            phi = &self.a_hat[i] * phi;
        }
        &self.c_hat[k] * phi
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(file)?)
    }
}

/// Default Hankel block counts `p = q = ceil(6 n_r / min(n_y, n_u))`.
pub fn default_blocks(n_r: usize, n_y: usize, n_u: usize) -> (usize, usize) {
    let b = (6 * n_r).div_ceil(n_y.min(n_u).max(1));
    (b, b)
}

struct Factor {
    obs: DMatrix<f64>,
    obs_pinv: DMatrix<f64>,
    ctrl: DMatrix<f64>,
    ctrl_pinv: DMatrix<f64>,
    spectrum: Vec<f64>,
    rows: usize,
    cols: usize,
}

fn factor(h: &DMatrix<f64>, n_r: usize, rows: usize, cols: usize) -> Factor {
    let svd = h.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V'");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let spectrum: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let s_max = spectrum.first().copied().unwrap_or(0.0);
    let mut obs = DMatrix::zeros(h.nrows(), n_r);
    let mut obs_pinv = DMatrix::zeros(n_r, h.nrows());
    let mut ctrl = DMatrix::zeros(n_r, h.ncols());
    let mut ctrl_pinv = DMatrix::zeros(h.ncols(), n_r);
    for (c, &i) in order.iter().take(n_r).enumerate() {
        let s = svd.singular_values[i];
        let root = s.sqrt();
        let inv_root = if s > s_max * 1e-14 && s > 0.0 { 1.0 / root } else { 0.0 };
        obs.set_column(c, &(u.column(i) * root));
        obs_pinv.set_row(c, &(u.column(i).transpose() * inv_root));
        ctrl.set_row(c, &(v_t.row(i) * root));
        ctrl_pinv.set_column(c, &(v_t.row(i).transpose() * inv_root));
    }
    Factor {
        obs,
        obs_pinv,
        ctrl,
        ctrl_pinv,
        spectrum,
        rows,
        cols,
    }
}

/// Time-varying ERA of order `n_r` with `p` block rows and `q` block columns.
///
/// Near the ends of the horizon the block counts shrink to what the data
/// supports; steps where fewer than `n_r` rows or columns remain fall outside
/// `time_range` and hold the nearest realized matrices.
pub fn tv_era(markov: &MarkovParams, n_r: usize, p: usize, q: usize) -> Result<LtvRom> {
    let (ny, nu) = (markov.n_y(), markov.n_u());
    if n_r == 0 || p * ny < n_r || q * nu < n_r {
        return Err(Error::Config(format!(
            "order {n_r} needs p·n_y >= n_r and q·n_u >= n_r (p={p}, q={q})"
        )));
    }
    let n = markov.horizon();
    let blocks = |k: usize| (p.min(n + 1 - k), q.min(k));
    let formable: Vec<usize> = (0..=n)
        .filter(|&k| {
            let (rows, cols) = blocks(k);
            rows * ny >= n_r && cols * nu >= n_r
        })
        .collect();
    let (k_lo, k_hi) = match (formable.first(), formable.last()) {
        (Some(&lo), Some(&hi)) if hi > lo => (lo, hi),
        _ => {
            return Err(Error::Index(format!(
                "horizon {n} too short for order {n_r} with p={p}, q={q}"
            )))
        }
    };

    let factors: Vec<Factor> = (k_lo..=k_hi)
        .into_par_iter()
        .map(|k| {
            let (rows, cols) = blocks(k);
            factor(&markov.hankel(k, rows, k - 1, cols), n_r, rows, cols)
        })
        .collect();
    let at = |k: usize| &factors[k - k_lo];

    let realized_a: Vec<DMatrix<f64>> = (k_lo..k_hi)
        .into_par_iter()
        .map(|k| {
            let (now, next) = (at(k), at(k + 1));
            let shifted = markov.hankel(k + 1, next.rows, k - 1, now.cols);
            &next.obs_pinv * shifted * &now.ctrl_pinv
        })
        .collect();

    let a_hat = (0..n)
        .map(|k| realized_a[k.clamp(k_lo, k_hi - 1) - k_lo].clone())
        .collect();
    let b_hat = (0..n)
        .map(|k| at(k.clamp(k_lo - 1, k_hi - 1) + 1).ctrl.columns(0, nu).into_owned())
        .collect();
    let c_hat = (0..=n)
        .map(|k| at(k.clamp(k_lo, k_hi)).obs.rows(0, ny).into_owned())
        .collect();
    let mut singular_values = vec![Vec::new(); n + 1];
    let mut gap_warning = false;
    for (k, f) in (k_lo..=k_hi).zip(&factors) {
        if let (Some(&first), Some(&next)) = (f.spectrum.first(), f.spectrum.get(n_r)) {
            if first > 0.0 && next / first > 0.5 {
                gap_warning = true;
            }
        }
        singular_values[k] = f.spectrum.clone();
    }
    if [&a_hat, &b_hat, &c_hat]
        .iter()
        .any(|seq: &&Vec<DMatrix<f64>>| seq.iter().any(|m| !linalg::is_finite_mat(m)))
    {
        return Err(Error::Config("realization produced non-finite matrices".into()));
    }
    Ok(LtvRom {
        a_hat,
        b_hat,
        c_hat,
        n_r,
        time_range: [k_lo, k_hi],
        singular_values,
        p,
        q,
        gap_warning,
    })
}

/// Smallest order with `s_{n+1} / s_1 <= threshold` at every interior step.
pub fn select_order(markov: &MarkovParams, p: usize, q: usize, threshold: f64) -> usize {
    let n = markov.horizon();
    let mut order = 1;
    for k in q..=n.saturating_sub(p - 1) {
        if k < 1 {
            continue;
        }
        let h = markov.hankel(k, p, k - 1, q);
        let mut s: Vec<f64> = h.singular_values().iter().cloned().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        if s.is_empty() || s[0] == 0.0 {
            continue;
        }
        let needed = s.iter().position(|v| v / s[0] <= threshold).unwrap_or(s.len());
        order = order.max(needed);
    }
    order
}

/// Relative Frobenius error of the ROM's Markov parameters over `holdout` pairs `(k, j)`.
pub fn validate_rom(rom: &LtvRom, markov: &MarkovParams, holdout: &[(usize, usize)]) -> Result<f64> {
    if holdout.is_empty() {
        return Err(Error::EmptyHoldout);
    }
    let n = markov.horizon().min(rom.horizon());
    let mut by_source: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(k, j) in holdout {
        if j >= k || k > n {
            return Err(Error::Index(format!("holdout pair ({k}, {j}) outside the Markov table")));
        }
        by_source.entry(j).or_default().push(k);
    }
    let mut err = RelativeError::default();
    for (j, mut targets) in by_source {
        targets.sort_unstable();
        let mut phi = rom.b_hat[j].clone();
        let mut at = j + 1;
        for k in targets {
            while at < k {
                phi = &rom.a_hat[at] * phi;
                at += 1;
            }
            err.add(&(&rom.c_hat[k] * &phi), markov.get(k, j));
        }
    }
    Ok(err.value())
}

/// Pairs inside the ROM's validity range whose lag `k - j` exceeds `min_lag`.
/// With `min_lag >= p + q` none of them entered any Hankel matrix.
pub fn long_lag_pairs(rom: &LtvRom, min_lag: usize) -> Vec<(usize, usize)> {
    let [lo, hi] = rom.time_range;
    let first = lo.saturating_sub(1);
    (first..hi)
        .flat_map(|j| (j + min_lag + 1..=hi).map(move |k| (k, j)))
        .collect()
}

/// Every pair inside the validity range.
pub fn all_pairs(rom: &LtvRom) -> Vec<(usize, usize)> {
    long_lag_pairs(rom, 0)
}
