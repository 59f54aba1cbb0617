//! Black-box plant contract and the concrete simulators used by the toolkit.
//!
//! A plant is a discrete-time map `x_{k+1} = f(x_k, u_k, w_k)`, `y_k = h(x_k, v_k)`.
//! Process noise enters through the control channels and measurement noise is
//! additive at the sensors, which is exactly the structure the identified
//! perturbation model assumes.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Lower/upper end of the temperature range over which the heat plant's
/// diffusivity and explicit-scheme stability are certified (°F).
pub const HEAT_OPERATING_RANGE: (f64, f64) = (0.0, 300.0);

/// Dimensions, noise covariances and horizon of a plant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub n_x: usize,
    pub n_u: usize,
    pub n_y: usize,
    /// W, enters as B (u + w).
    #[serde(with = "linalg::matrix_serde::matrix")]
    pub process_noise: DMatrix<f64>,
    /// V, additive at the sensors.
    #[serde(with = "linalg::matrix_serde::matrix")]
    pub measurement_noise: DMatrix<f64>,
    pub horizon: usize,
    pub dt: f64,
}

impl PlantSpec {
    pub fn new(
        n_x: usize,
        n_u: usize,
        n_y: usize,
        process_noise: DMatrix<f64>,
        measurement_noise: DMatrix<f64>,
        horizon: usize,
        dt: f64,
    ) -> Result<Self> {
        if n_x == 0 || n_u == 0 || n_y == 0 || horizon == 0 {
            return Err(Error::Config(
                "plant dimensions and horizon must be at least 1".into(),
            ));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("step duration must be positive, got {dt}")));
        }
        if process_noise.shape() != (n_u, n_u) || measurement_noise.shape() != (n_y, n_y) {
            return Err(Error::Dimension(format!(
                "W must be {n_u}x{n_u} and V {n_y}x{n_y}, got {:?} and {:?}",
                process_noise.shape(),
                measurement_noise.shape()
            )));
        }
        for (name, m) in [("W", &process_noise), ("V", &measurement_noise)] {
            if linalg::max_asymmetry(m) > 1e-10 || !linalg::is_psd(m, -1e-10) {
                return Err(Error::Config(format!("{name} must be symmetric positive semi-definite")));
            }
        }
        Ok(Self {
            n_x,
            n_u,
            n_y,
            process_noise,
            measurement_noise,
            horizon,
            dt,
        })
    }
}

/// The black-box simulator contract. Implementations must be pure functions of
/// their arguments so they can be evaluated concurrently.
pub trait Plant: Send + Sync {
    fn spec(&self) -> &PlantSpec;

    /// One transition from time `k` to `k + 1`.
    fn step(
        &self,
        k: usize,
        state: &DVector<f64>,
        control: &DVector<f64>,
        process_noise: &DVector<f64>,
    ) -> Result<DVector<f64>>;

    /// Measurement at time `k`.
    fn observe(&self, k: usize, state: &DVector<f64>, meas_noise: &DVector<f64>) -> Result<DVector<f64>>;

    /// Exposes the model when the plant is known to be linear (used by the
    /// exact Kalman belief engine and oracles; the black-box pipeline never needs it).
    fn as_linear(&self) -> Option<&LinearPlant> {
        None
    }
}

fn check_len(what: &str, v: &DVector<f64>, n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::Dimension(format!("{what} has length {}, expected {n}", v.len())));
    }
    Ok(())
}

/// Noiseless state and observation sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub states: Vec<DVector<f64>>,
    pub observations: Vec<DVector<f64>>,
}

/// Noiseless rollout `x_{k+1} = f(x_k, u_k, 0)`, `y_k = h(x_k, 0)`.
pub fn simulate_nominal<P: Plant + ?Sized>(
    plant: &P,
    x0: &DVector<f64>,
    controls: &[DVector<f64>],
) -> Result<Rollout> {
    let spec = plant.spec();
    if controls.len() != spec.horizon {
        return Err(Error::Dimension(format!(
            "{} controls supplied for a horizon of {}",
            controls.len(),
            spec.horizon
        )));
    }
    let w0 = DVector::zeros(spec.n_u);
    let v0 = DVector::zeros(spec.n_y);
    let mut states = Vec::with_capacity(controls.len() + 1);
    let mut observations = Vec::with_capacity(controls.len() + 1);
    states.push(x0.clone());
    observations.push(plant.observe(0, x0, &v0)?);
    for (k, u) in controls.iter().enumerate() {
        let next = plant.step(k, &states[k], u, &w0)?;
        observations.push(plant.observe(k + 1, &next, &v0)?);
        states.push(next);
    }
    Ok(Rollout {
        states,
        observations,
    })
}

/// Noiseless continuation of `base` from time `start` under `controls`
/// (only `controls[start..]` are used). Returns observations for `start+1..=N`.
pub(crate) fn continue_noiseless<P: Plant + ?Sized>(
    plant: &P,
    start: usize,
    x_start: &DVector<f64>,
    controls: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    let spec = plant.spec();
    let w0 = DVector::zeros(spec.n_u);
    let v0 = DVector::zeros(spec.n_y);
    let mut x = x_start.clone();
    let mut out = Vec::with_capacity(controls.len() - start);
    for (k, u) in controls.iter().enumerate().skip(start) {
        x = plant.step(k, &x, u, &w0)?;
        out.push(plant.observe(k + 1, &x, &v0)?);
    }
    Ok(out)
}

/// Linear (possibly time-varying) plant `x+ = A_k x + B_k (u + w)`, `y = C_k x + v`.
///
/// Sequences shorter than the horizon are extended by holding their last entry,
/// so an LTI plant just stores one matrix of each kind.
#[derive(Debug, Clone)]
pub struct LinearPlant {
    a: Vec<DMatrix<f64>>,
    b: Vec<DMatrix<f64>>,
    c: Vec<DMatrix<f64>>,
    spec: PlantSpec,
}

impl LinearPlant {
    pub fn time_varying(
        a: Vec<DMatrix<f64>>,
        b: Vec<DMatrix<f64>>,
        c: Vec<DMatrix<f64>>,
        w: DMatrix<f64>,
        v: DMatrix<f64>,
        horizon: usize,
        dt: f64,
    ) -> Result<Self> {
        if a.is_empty() || b.is_empty() || c.is_empty() {
            return Err(Error::Config("linear plant needs at least one A, B and C".into()));
        }
        let n_x = a[0].nrows();
        let n_u = b[0].ncols();
        let n_y = c[0].nrows();
        let bad = a.iter().any(|m| m.shape() != (n_x, n_x))
            || b.iter().any(|m| m.shape() != (n_x, n_u))
            || c.iter().any(|m| m.shape() != (n_y, n_x));
        if bad {
            return Err(Error::Dimension("inconsistent A/B/C shapes".into()));
        }
        let spec = PlantSpec::new(n_x, n_u, n_y, w, v, horizon, dt)?;
        Ok(Self { a, b, c, spec })
    }

    pub fn lti(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        w: DMatrix<f64>,
        v: DMatrix<f64>,
        horizon: usize,
        dt: f64,
    ) -> Result<Self> {
        Self::time_varying(vec![a], vec![b], vec![c], w, v, horizon, dt)
    }

    pub fn a(&self, k: usize) -> &DMatrix<f64> {
        &self.a[k.min(self.a.len() - 1)]
    }

    pub fn b(&self, k: usize) -> &DMatrix<f64> {
        &self.b[k.min(self.b.len() - 1)]
    }

    pub fn c(&self, k: usize) -> &DMatrix<f64> {
        &self.c[k.min(self.c.len() - 1)]
    }

    /// Same dynamics with different noise covariances.
    pub fn with_noise(&self, w: DMatrix<f64>, v: DMatrix<f64>) -> Result<Self> {
        Self::time_varying(
            self.a.clone(),
            self.b.clone(),
            self.c.clone(),
            w,
            v,
            self.spec.horizon,
            self.spec.dt,
        )
    }
}

impl Plant for LinearPlant {
    fn spec(&self) -> &PlantSpec {
        &self.spec
    }

    fn step(
        &self,
        k: usize,
        state: &DVector<f64>,
        control: &DVector<f64>,
        process_noise: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        check_len("state", state, self.spec.n_x)?;
        check_len("control", control, self.spec.n_u)?;
        check_len("process noise", process_noise, self.spec.n_u)?;
        let next = self.a(k) * state + self.b(k) * (control + process_noise);
        if !linalg::is_finite_vec(&next) {
            return Err(Error::Diverged { step: k });
        }
        Ok(next)
    }

    fn observe(&self, k: usize, state: &DVector<f64>, meas_noise: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("state", state, self.spec.n_x)?;
        check_len("measurement noise", meas_noise, self.spec.n_y)?;
        Ok(self.c(k) * state + meas_noise)
    }

    fn as_linear(&self) -> Option<&LinearPlant> {
        Some(self)
    }
}

fn default_positions() -> Vec<f64> {
    (0..5).map(|i| 0.1 + 0.2 * i as f64).collect()
}

fn default_substeps() -> usize {
    4
}

fn default_unit() -> f64 {
    1.0
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// Configuration of the 1-D nonlinear heat slab
/// `T_t = K(T) T_xx - eta T + u` with `K(T) = k0 (1 + k1 T)`,
/// insulated at `x = 0` and held at `t_right` at `x = L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeatPlantConfig {
    pub n_grid: usize,
    #[serde(rename = "L")]
    pub length: f64,
    pub eta: f64,
    /// Absolute diffusivity coefficient; `None` picks the stability-scaled default.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k0: Option<f64>,
    pub k1: f64,
    /// Fractional actuator positions on [0, 1].
    pub actuators: Vec<f64>,
    /// Fractional sensor positions on [0, 1].
    pub sensors: Vec<f64>,
    pub t_init: f64,
    pub t_right: f64,
    pub dt: f64,
    pub horizon: usize,
    /// Explicit Euler sub-steps per control interval.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    /// Isotropic process-noise variance (W = w_var I).
    #[serde(default = "default_unit")]
    pub w_var: f64,
    /// Isotropic measurement-noise variance (V = v_var I).
    #[serde(default = "default_unit")]
    pub v_var: f64,
    /// Replaces the Dirichlet end with an insulated one (used for conservation checks).
    #[serde(skip_serializing_if = "is_false")]
    pub right_insulated: bool,
}

impl Default for HeatPlantConfig {
    fn default() -> Self {
        Self {
            n_grid: 100,
            length: 1.0,
            eta: 5e-4,
            k0: None,
            k1: 1e-3,
            actuators: default_positions(),
            sensors: default_positions(),
            t_init: 100.0,
            t_right: 150.0,
            dt: 0.25,
            horizon: 250,
            substeps: default_substeps(),
            w_var: 1.0,
            v_var: 1.0,
            right_insulated: false,
        }
    }
}

impl HeatPlantConfig {
    pub fn dx(&self) -> f64 {
        self.length / (self.n_grid as f64 - 1.0)
    }

    fn sub_dt(&self) -> f64 {
        self.dt / self.substeps.max(1) as f64
    }

    /// Resolved k0: explicit value, or 0.35 dx²/h so that the diffusion
    /// number stays below 0.5 over the whole operating range.
    pub fn k0(&self) -> f64 {
        self.k0
            .unwrap_or_else(|| 0.35 * self.dx() * self.dx() / self.sub_dt())
    }

    pub fn diffusivity(&self, temperature: f64) -> f64 {
        self.k0() * (1.0 + self.k1 * temperature)
    }

    /// Largest diffusion number `K h / dx²` over the operating range.
    pub fn max_diffusion_number(&self) -> f64 {
        let (lo, hi) = HEAT_OPERATING_RANGE;
        let scale = self.sub_dt() / (self.dx() * self.dx());
        self.diffusivity(lo).max(self.diffusivity(hi)) * scale
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Grid index nearest to a fractional position.
    pub fn node(&self, fraction: f64) -> usize {
        ((fraction * (self.n_grid as f64 - 1.0)).round() as usize).min(self.n_grid - 1)
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_grid < 3 {
            return Err(Error::Config("heat plant needs at least 3 grid points".into()));
        }
        if !(self.length > 0.0) || !(self.dt > 0.0) || self.horizon == 0 || self.substeps == 0 {
            return Err(Error::Config("L, dt, horizon and substeps must be positive".into()));
        }
        if self.eta < 0.0 || self.w_var < 0.0 || self.v_var < 0.0 {
            return Err(Error::Config("eta and noise variances must be non-negative".into()));
        }
        if self.actuators.is_empty() || self.sensors.is_empty() {
            return Err(Error::Config("at least one actuator and one sensor required".into()));
        }
        if self
            .actuators
            .iter()
            .chain(&self.sensors)
            .any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(Error::Config("actuator/sensor positions must lie in [0, 1]".into()));
        }
        let (lo, hi) = HEAT_OPERATING_RANGE;
        if self.k0() < 0.0 || self.diffusivity(lo) < 0.0 || self.diffusivity(hi) < 0.0 {
            return Err(Error::Config(format!(
                "diffusivity must be non-negative on [{lo}, {hi}]°F"
            )));
        }
        let r = self.max_diffusion_number();
        if r > 0.5 {
            return Err(Error::Config(format!(
                "explicit scheme unstable: max K·dt/dx² = {r:.4} > 0.5"
            )));
        }
        Ok(())
    }
}

/// Finite-difference heat slab with point actuators and point sensors.
#[derive(Debug, Clone)]
pub struct HeatPlant {
    config: HeatPlantConfig,
    actuator_nodes: Vec<usize>,
    sensor_nodes: Vec<usize>,
    k0: f64,
    inv_dx2: f64,
    sub_dt: f64,
    spec: PlantSpec,
}

impl HeatPlant {
    pub fn new(config: HeatPlantConfig) -> Result<Self> {
        config.validate()?;
        let actuator_nodes = config.actuators.iter().map(|&p| config.node(p)).collect::<Vec<_>>();
        let sensor_nodes = config.sensors.iter().map(|&p| config.node(p)).collect::<Vec<_>>();
        let n_u = actuator_nodes.len();
        let n_y = sensor_nodes.len();
        let spec = PlantSpec::new(
            config.n_grid,
            n_u,
            n_y,
            DMatrix::identity(n_u, n_u) * config.w_var,
            DMatrix::identity(n_y, n_y) * config.v_var,
            config.horizon,
            config.dt,
        )?;
        let dx = config.dx();
        Ok(Self {
            k0: config.k0(),
            inv_dx2: 1.0 / (dx * dx),
            sub_dt: config.sub_dt(),
            actuator_nodes,
            sensor_nodes,
            config,
            spec,
        })
    }

    pub fn config(&self) -> &HeatPlantConfig {
        &self.config
    }

    pub fn actuator_nodes(&self) -> &[usize] {
        &self.actuator_nodes
    }

    pub fn sensor_nodes(&self) -> &[usize] {
        &self.sensor_nodes
    }

    /// Uniform initial profile with the Dirichlet end applied.
    pub fn initial_state(&self) -> DVector<f64> {
        let mut x = DVector::from_element(self.config.n_grid, self.config.t_init);
        if !self.config.right_insulated {
            x[self.config.n_grid - 1] = self.config.t_right;
        }
        x
    }

    /// Trapezoidal heat content `∫ T dx`, conserved by the insulated,
    /// source-free, loss-free scheme when K is constant.
    pub fn heat_content(&self, state: &DVector<f64>) -> f64 {
        let n = state.len();
        let interior: f64 = state.iter().skip(1).take(n - 2).sum();
        (interior + 0.5 * (state[0] + state[n - 1])) * self.config.dx()
    }

    fn advance(&self, t: &mut Vec<f64>, next: &mut Vec<f64>, sources: &[f64]) {
        let n = t.len();
        let (k0, k1, eta, h) = (self.k0, self.config.k1, self.config.eta, self.sub_dt);
        let (a, b) = (h * k0 * self.inv_dx2, h * k0 * k1 * self.inv_dx2);
        let node = |ti: f64, lap: f64| ti + (a + b * ti) * lap - h * eta * ti;
        for _ in 0..self.config.substeps {
            next[0] = node(t[0], 2.0 * (t[1] - t[0]));
            next[n - 1] = node(t[n - 1], 2.0 * (t[n - 2] - t[n - 1]));
            for (out, w) in next[1..n - 1].iter_mut().zip(t.windows(3)) {
                *out = node(w[1], w[2] - 2.0 * w[1] + w[0]);
            }
            for (&i, s) in self.actuator_nodes.iter().zip(sources) {
                next[i] += h * s;
            }
            if !self.config.right_insulated {
                next[n - 1] = self.config.t_right;
            }
            std::mem::swap(t, next);
        }
    }
}

impl Plant for HeatPlant {
    fn spec(&self) -> &PlantSpec {
        &self.spec
    }

    fn step(
        &self,
        k: usize,
        state: &DVector<f64>,
        control: &DVector<f64>,
        process_noise: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        check_len("state", state, self.spec.n_x)?;
        check_len("control", control, self.spec.n_u)?;
        check_len("process noise", process_noise, self.spec.n_u)?;
        let sources: Vec<f64> = control.iter().zip(process_noise.iter()).map(|(u, w)| u + w).collect();
        let mut t = state.as_slice().to_vec();
        let mut next = vec![0.0; t.len()];
        self.advance(&mut t, &mut next, &sources);
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step: k });
        }
        Ok(DVector::from_vec(t))
    }

    fn observe(&self, _k: usize, state: &DVector<f64>, meas_noise: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("state", state, self.spec.n_x)?;
        check_len("measurement noise", meas_noise, self.spec.n_y)?;
        Ok(DVector::from_iterator(
            self.sensor_nodes.len(),
            self.sensor_nodes.iter().zip(meas_noise.iter()).map(|(&i, v)| state[i] + v),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plant_with(f: impl FnOnce(&mut HeatPlantConfig)) -> HeatPlant {
        let mut cfg = HeatPlantConfig::default();
        f(&mut cfg);
        HeatPlant::new(cfg).unwrap()
    }

    fn zeros(n: usize) -> DVector<f64> {
        DVector::zeros(n)
    }

    #[test]
    fn default_positions_map_to_expected_nodes() {
        let p = plant_with(|_| {});
        assert_eq!(p.actuator_nodes(), &[10, 30, 50, 69, 89]);
        assert_eq!(p.sensor_nodes(), p.actuator_nodes());
    }

    #[test]
    fn zero_diffusivity_leaves_interior_unchanged() {
        let p = plant_with(|c| {
            c.k0 = Some(0.0);
            c.eta = 0.0;
        });
        let x = p.initial_state();
        let next = p.step(0, &x, &zeros(5), &zeros(5)).unwrap();
        assert_eq!(next, x);
    }

    #[test]
    fn uniform_boundary_temperature_is_an_equilibrium() {
        let p = plant_with(|c| c.eta = 0.0);
        let x = DVector::from_element(100, 150.0);
        let next = p.step(3, &x, &zeros(5), &zeros(5)).unwrap();
        assert_eq!(next, x);
    }

    #[test]
    fn dirichlet_end_is_pinned() {
        let p = plant_with(|_| {});
        let mut x = DVector::from_fn(100, |i, _| 90.0 + i as f64);
        x[99] = 123.0;
        let u = DVector::from_element(5, 40.0);
        let w = DVector::from_element(5, -3.0);
        let next = p.step(0, &x, &u, &w).unwrap();
        assert_eq!(next[99], 150.0);
    }

    #[test]
    fn unstable_configuration_is_rejected_at_construction() {
        let mut cfg = HeatPlantConfig::default();
        cfg.k0 = Some(0.6 * cfg.dx() * cfg.dx() / (cfg.dt / cfg.substeps as f64));
        assert!(matches!(HeatPlant::new(cfg), Err(Error::Config(_))));
    }

    #[test]
    fn negative_diffusivity_is_rejected() {
        let mut cfg = HeatPlantConfig::default();
        cfg.k1 = -0.01;
        assert!(HeatPlant::new(cfg).is_err());
    }

    #[test]
    fn insulated_slab_conserves_heat_content() {
        let p = plant_with(|c| {
            c.eta = 0.0;
            c.k1 = 0.0;
            c.right_insulated = true;
        });
        let mut x = DVector::from_fn(100, |i, _| 100.0 + 30.0 * ((i as f64) * 0.17).sin());
        for k in 0..50 {
            let before = p.heat_content(&x);
            x = p.step(k, &x, &zeros(5), &zeros(5)).unwrap();
            let after = p.heat_content(&x);
            assert!(((after - before) / before).abs() < 1e-9, "step {k}");
        }
    }

    #[test]
    fn observe_selects_sensor_nodes() {
        let p = plant_with(|_| {});
        let x = DVector::from_fn(100, |i, _| i as f64);
        let y = p.observe(0, &x, &zeros(5)).unwrap();
        assert_eq!(y.as_slice(), &[10.0, 30.0, 50.0, 69.0, 89.0]);
        let v = DVector::from_vec(vec![1.0, -2.0, 3.0, 0.5, 0.25]);
        assert_eq!(p.observe(0, &zeros(100), &v).unwrap(), v);
    }

    #[test]
    fn non_finite_state_reports_the_step() {
        let p = plant_with(|_| {});
        let mut x = p.initial_state();
        x[4] = f64::NAN;
        match p.step(17, &x, &zeros(5), &zeros(5)) {
            Err(Error::Diverged { step }) => assert_eq!(step, 17),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_control_length_is_a_dimension_error() {
        let p = plant_with(|_| {});
        let x = p.initial_state();
        assert!(matches!(
            p.step(0, &x, &zeros(4), &zeros(5)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn config_json_round_trip_uses_exact_keys() {
        let cfg = HeatPlantConfig::default();
        let json = serde_json::to_value(&cfg).unwrap();
        for key in [
            "n_grid", "L", "eta", "k1", "actuators", "sensors", "t_init", "t_right", "dt", "horizon",
        ] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        let text = r#"{"n_grid": 50, "L": 2.0, "eta": 0.0, "k0": 1e-4, "k1": 0.0,
            "actuators": [0.5], "sensors": [0.25, 0.75], "t_init": 120, "t_right": 150,
            "dt": 0.5, "horizon": 10}"#;
        let parsed: HeatPlantConfig = serde_json::from_str(text).unwrap();
        assert_eq!(parsed.n_grid, 50);
        assert_eq!(parsed.length, 2.0);
        assert_eq!(parsed.k0(), 1e-4);
        assert_eq!(parsed.sensors.len(), 2);
        HeatPlant::new(parsed).unwrap();
    }

    #[test]
    fn plant_spec_rejects_indefinite_noise() {
        let w = DMatrix::from_row_slice(1, 1, &[-1.0]);
        let v = DMatrix::identity(1, 1);
        assert!(PlantSpec::new(1, 1, 1, w, v, 1, 1.0).is_err());
    }
}
