//! Time-varying LQG on the identified reduced-order model.
//!
//! The regulator and the estimator are designed separately: a backward LQR
//! Riccati recursion gives the feedback gains `L_k`, a forward Kalman Riccati
//! recursion gives the estimator gains `K_k`. Online, [`LqgController`]
//! filters the output deviation from the nominal into a ROM-state estimate
//! `δâ_k` and applies `u_k = ū_k − L_k δâ_k`.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, matrix_serde};
use crate::sysid::LtvRom;
use crate::trajopt::NominalTrajectory;

/// Backward Riccati solution: gains `L_0..L_{N-1}` and costs-to-go `S_0..S_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrSolution {
    pub gains: Vec<DMatrix<f64>>,
    pub riccati: Vec<DMatrix<f64>>,
}

/// Forward Riccati solution indexed `0..=N`: estimator gains, one-step
/// predicted covariances `P_{k|k-1}` and filtered covariances `P_{k|k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanSolution {
    pub gains: Vec<DMatrix<f64>>,
    pub predicted: Vec<DMatrix<f64>>,
    pub filtered: Vec<DMatrix<f64>>,
}

fn check_square(m: &DMatrix<f64>, n: usize, what: &str) -> Result<()> {
    if m.shape() != (n, n) {
        return Err(Error::Dimension(format!("{what} must be {n}x{n}, got {:?}", m.shape())));
    }
    Ok(())
}

/// Finite-horizon LQR on `(Â_k, B̂_k)` with stage weights `q[k]`, `r[k]`
/// (`k = 0..N-1`) and terminal weight `q_terminal`.
pub fn lqr_backward(
    rom: &LtvRom,
    q: &[DMatrix<f64>],
    q_terminal: &DMatrix<f64>,
    r: &[DMatrix<f64>],
) -> Result<LqrSolution> {
    let n = rom.horizon();
    let (n_r, n_u) = (rom.n_r, rom.n_u());
    if q.len() != n || r.len() != n {
        return Err(Error::Dimension(format!(
            "need {n} stage weights, got {} state and {} control",
            q.len(),
            r.len()
        )));
    }
    check_square(q_terminal, n_r, "terminal weight")?;
    let mut riccati = vec![DMatrix::zeros(n_r, n_r); n + 1];
    let mut gains = vec![DMatrix::zeros(n_u, n_r); n];
    riccati[n] = linalg::symmetrize(q_terminal);
    for k in (0..n).rev() {
        check_square(&q[k], n_r, "state weight")?;
        check_square(&r[k], n_u, "control weight")?;
        let (a, b) = (&rom.a_hat[k], &rom.b_hat[k]);
        let s = &riccati[k + 1];
        let bts = b.transpose() * s;
        let inner = linalg::symmetrize(&(&r[k] + &bts * b));
        let gain = inner
            .cholesky()
            .ok_or(Error::IllPosedCost { step: k })?
            .solve(&(&bts * a));
        let next = &q[k] + a.transpose() * s * a - a.transpose() * bts.transpose() * &gain;
        riccati[k] = linalg::symmetrize(&next);
        if !linalg::is_finite_mat(&gain) {
            return Err(Error::IllPosedCost { step: k });
        }
        gains[k] = gain;
    }
    Ok(LqrSolution { gains, riccati })
}

/// Kalman filter on the ROM with process noise entering through `B̂_k`
/// (`B̂_k W B̂_k'`), measurement noise `V` and prior `P_{0|-1} = p0`.
pub fn kf_forward(rom: &LtvRom, w: &DMatrix<f64>, v: &DMatrix<f64>, p0: &DMatrix<f64>) -> Result<KalmanSolution> {
    let n = rom.horizon();
    let (n_r, n_y) = (rom.n_r, rom.n_y());
    check_square(w, rom.n_u(), "process noise")?;
    check_square(v, n_y, "measurement noise")?;
    check_square(p0, n_r, "initial covariance")?;
    if !linalg::is_psd(p0, -1e-8) {
        return Err(Error::Config("initial covariance is not positive semi-definite".into()));
    }
    let eye = DMatrix::<f64>::identity(n_r, n_r);
    let mut gains = Vec::with_capacity(n + 1);
    let mut predicted = Vec::with_capacity(n + 1);
    let mut filtered = Vec::with_capacity(n + 1);
    let mut prior = linalg::symmetrize(p0);
    for k in 0..=n {
        let c = &rom.c_hat[k];
        let pct = &prior * c.transpose();
        let innovation = linalg::symmetrize(&(c * &pct + v));
        let gain = innovation
            .cholesky()
            .ok_or(Error::DegenerateMeasurement { step: k })?
            .solve(&pct.transpose())
            .transpose();
        let i_kc = &eye - &gain * c;
        let post = linalg::symmetrize(&(&i_kc * &prior * i_kc.transpose() + &gain * v * gain.transpose()));
        if !linalg::is_finite_mat(&gain) {
            return Err(Error::DegenerateMeasurement { step: k });
        }
        gains.push(gain);
        predicted.push(prior);
        if k < n {
            let (a, b) = (&rom.a_hat[k], &rom.b_hat[k]);
            prior = linalg::symmetrize(&(a * &post * a.transpose() + b * w * b.transpose()));
        } else {
            prior = DMatrix::zeros(0, 0);
        }
        filtered.push(post);
    }
    Ok(KalmanSolution {
        gains,
        predicted,
        filtered,
    })
}

/// ROM-space weights. State weights are output-weighted,
/// `Q_k = q_y Ĉ_k'Ĉ_k + q_reg I`, with `Q_N = terminal_scale · Q_N`-shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LqgWeights {
    pub q_y: f64,
    pub q_reg: f64,
    pub r_u: f64,
    pub terminal_scale: f64,
    /// Process-noise variance per input channel.
    pub w_var: f64,
    /// Measurement-noise variance per sensor.
    pub v_var: f64,
    /// Prior variance of the ROM state.
    pub p0_var: f64,
}

impl Default for LqgWeights {
    fn default() -> Self {
        Self {
            q_y: 1.0,
            q_reg: 1e-8,
            r_u: 0.1,
            terminal_scale: 10.0,
            w_var: 1.0,
            v_var: 1.0,
            p0_var: 1.0,
        }
    }
}

impl LqgWeights {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.q_reg, self.r_u, self.terminal_scale, self.v_var];
        let non_negative = [self.q_y, self.w_var, self.p0_var];
        if positive.iter().any(|v| !(*v > 0.0)) || non_negative.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config(format!("invalid LQG weights {self:?}")));
        }
        Ok(())
    }

    pub fn state_weight(&self, c: &DMatrix<f64>) -> DMatrix<f64> {
        let n = c.ncols();
        c.transpose() * c * self.q_y + DMatrix::identity(n, n) * self.q_reg
    }

    /// Stage weights `(Q_0..Q_{N-1}, Q_N, R_0..R_{N-1})` for `rom`.
    pub fn cost_matrices(&self, rom: &LtvRom) -> (Vec<DMatrix<f64>>, DMatrix<f64>, Vec<DMatrix<f64>>) {
        let n = rom.horizon();
        let q = (0..n).map(|k| self.state_weight(&rom.c_hat[k])).collect();
        let q_n = self.state_weight(&rom.c_hat[n]) * self.terminal_scale;
        let r = vec![DMatrix::identity(rom.n_u(), rom.n_u()) * self.r_u; n];
        (q, q_n, r)
    }
}

/// Offline part of the controller: the ROM it was designed on and both gain
/// sequences. Shared read-only between Monte Carlo runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqgDesign {
    pub weights: LqgWeights,
    /// `L_0..L_{N-1}`, each n_u × n_r.
    #[serde(with = "matrix_serde::matrices")]
    pub l_gains: Vec<DMatrix<f64>>,
    /// `K_0..K_N`, each n_r × n_y.
    #[serde(with = "matrix_serde::matrices")]
    pub k_gains: Vec<DMatrix<f64>>,
    #[serde(with = "matrix_serde::matrices")]
    pub riccati: Vec<DMatrix<f64>>,
    #[serde(with = "matrix_serde::matrices")]
    pub filter_cov: Vec<DMatrix<f64>>,
    pub rom: LtvRom,
}

impl LqgDesign {
    pub fn new(rom: LtvRom, weights: LqgWeights) -> Result<Self> {
        weights.validate()?;
        let (q, q_n, r) = weights.cost_matrices(&rom);
        let lqr = lqr_backward(&rom, &q, &q_n, &r)?;
        let n_r = rom.n_r;
        let w = DMatrix::identity(rom.n_u(), rom.n_u()) * weights.w_var;
        let v = DMatrix::identity(rom.n_y(), rom.n_y()) * weights.v_var;
        let p0 = DMatrix::identity(n_r, n_r) * weights.p0_var;
        let kf = kf_forward(&rom, &w, &v, &p0)?;
        Ok(Self {
            weights,
            l_gains: lqr.gains,
            k_gains: kf.gains,
            riccati: lqr.riccati,
            filter_cov: kf.filtered,
            rom,
        })
    }

    pub fn horizon(&self) -> usize {
        self.l_gains.len()
    }

    /// Sizes of the regulator and estimator Riccati matrices.
    pub fn riccati_dims(&self) -> ((usize, usize), (usize, usize)) {
        (self.riccati[0].shape(), self.filter_cov[0].shape())
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

    /// Writes `k, norm_L, norm_K, trace_S, trace_P`; `norm_L` is empty at `k = N`.
    pub fn write_diagnostics_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = csv::Writer::from_path(path)?;
        out.write_record(["k", "norm_L", "norm_K", "trace_S", "trace_P"])?;
        for k in 0..=self.horizon() {
            let l = self.l_gains.get(k).map(|m| m.norm().to_string()).unwrap_or_default();
            out.write_record([
                k.to_string(),
                l,
                self.k_gains[k].norm().to_string(),
                self.riccati[k].trace().to_string(),
                self.filter_cov[k].trace().to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Online controller for one closed-loop run.
#[derive(Debug, Clone)]
pub struct LqgController {
    design: Arc<LqgDesign>,
    estimate: DVector<f64>,
}

impl LqgController {
    pub fn new(design: Arc<LqgDesign>) -> Self {
        let n_r = design.rom.n_r;
        Self {
            design,
            estimate: DVector::zeros(n_r),
        }
    }

    pub fn design(&self) -> &LqgDesign {
        &self.design
    }

    /// Current ROM-state estimate `δâ`.
    pub fn estimate(&self) -> &DVector<f64> {
        &self.estimate
    }

    pub fn reset(&mut self) {
        self.estimate.fill(0.0);
    }

    /// Measurement update with `y_k`, control, then time update. Returns the
    /// control to apply at step `k`.
    pub fn closed_loop_step(&mut self, k: usize, y: &DVector<f64>, nominal: &NominalTrajectory) -> Result<DVector<f64>> {
        let d = &*self.design;
        if k >= d.horizon() || k >= nominal.controls.len() {
            return Err(Error::Index(format!("control step {k} beyond horizon {}", d.horizon())));
        }
        let y_bar = &nominal.observations[k];
        if y.len() != y_bar.len() {
            return Err(Error::Dimension(format!("measurement has length {}, expected {}", y.len(), y_bar.len())));
        }
        let rom = &d.rom;
        let dy = y - y_bar;
        let innovation = dy - &rom.c_hat[k] * &self.estimate;
        self.estimate += &d.k_gains[k] * innovation;
        let du = -(&d.l_gains[k] * &self.estimate);
        let applied = &nominal.controls[k] + &du;
        self.estimate = &rom.a_hat[k] * &self.estimate + &rom.b_hat[k] * du;
        Ok(applied)
    }
}
