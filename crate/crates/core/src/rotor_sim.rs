//! Physical twin: a DC motor driving an eccentric rotor that sits on an
//! anisotropic, non-rigid foundation, plus the generator of the degrading
//! experiment stream.
//!
//! Equations of motion (foundation displacements `x`, `y`, rotor angle `phi`):
//!
//! ```text
//! M x'' + Rx x' + Kx x = m e (w^2 cos phi + phi'' sin phi)
//! M y'' + Ry y' + Ky y = m e (w^2 sin phi - phi'' cos phi)
//! (J + m e^2) phi''    = G(w, V) + m e (x'' sin phi - y'' cos phi)
//! G(w, V) = kt/Ra (V - ke w) - b w
//! ```
//!
//! The three accelerations are coupled and solved together at every
//! evaluation. When the drive cannot supply the power absorbed by the
//! foundation near `w = sqrt(Kx/M)` the speed stalls at the resonance
//! (Sommerfeld effect).

use std::io::Write;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{LdtError, Result};
use crate::format::g9;
use crate::seed::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RotorParams {
    /// Foundation plus motor mass `M` [kg].
    pub mass: f64,
    /// Unbalance mass `m` [kg].
    pub unbalance_mass: f64,
    /// Eccentricity `e` [m].
    pub eccentricity: f64,
    /// Rotor moment of inertia `J` [kg m^2].
    pub inertia: f64,
    pub stiffness_x: f64,
    pub stiffness_y: f64,
    pub damping_x: f64,
    pub damping_y: f64,
    /// Torque constant [N m / A].
    pub torque_constant: f64,
    /// Back-EMF constant [V s / rad].
    pub back_emf_constant: f64,
    /// Armature resistance [Ohm].
    pub resistance: f64,
    /// Viscous rotor friction [N m s / rad].
    pub friction: f64,
}

impl Default for RotorParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            unbalance_mass: 0.1,
            eccentricity: 0.0,
            inertia: 5e-3,
            stiffness_x: 3000.0,
            stiffness_y: 4500.0,
            damping_x: 2.0,
            damping_y: 2.0,
            torque_constant: 0.1,
            back_emf_constant: 0.1,
            resistance: 1.0,
            friction: 1e-3,
        }
    }
}

impl RotorParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass", self.mass),
            ("unbalance_mass", self.unbalance_mass),
            ("inertia", self.inertia),
            ("stiffness_x", self.stiffness_x),
            ("stiffness_y", self.stiffness_y),
            ("damping_x", self.damping_x),
            ("damping_y", self.damping_y),
            ("torque_constant", self.torque_constant),
            ("back_emf_constant", self.back_emf_constant),
            ("resistance", self.resistance),
            ("friction", self.friction),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(LdtError::Config(format!("rotor.{name} must be positive, got {value}")));
            }
        }
        if !(self.eccentricity.is_finite() && self.eccentricity >= 0.0) {
            return Err(LdtError::Config(format!("rotor.eccentricity must be >= 0, got {}", self.eccentricity)));
        }
        if self.stiffness_x == self.stiffness_y {
            return Err(LdtError::Config("rotor foundation must be anisotropic (stiffness_x != stiffness_y)".into()));
        }
        if self.unbalance_mass >= self.mass {
            return Err(LdtError::Config("rotor.unbalance_mass must be below rotor.mass".into()));
        }
        Ok(())
    }

    pub fn with_eccentricity(&self, e: f64) -> Self {
        Self { eccentricity: e, ..*self }
    }

    /// Motor torque net of viscous friction.
    pub fn drive_torque(&self, omega: f64, voltage: f64) -> f64 {
        self.torque_constant / self.resistance * (voltage - self.back_emf_constant * omega) - self.friction * omega
    }

    /// Speed at which the drive torque vanishes for a constant voltage.
    pub fn steady_state_speed(&self, voltage: f64) -> f64 {
        let gain = self.torque_constant / self.resistance;
        gain * voltage / (gain * self.back_emf_constant + self.friction)
    }

    /// Horizontal foundation natural frequency `sqrt(Kx/M)` [rad/s].
    pub fn resonance_x(&self) -> f64 {
        (self.stiffness_x / self.mass).sqrt()
    }

    /// Kinetic plus elastic energy of the coupled system.
    pub fn energy(&self, s: &RotorState) -> f64 {
        let me = self.unbalance_mass * self.eccentricity;
        let (sin, cos) = s.phi.sin_cos();
        0.5 * self.mass * (s.vx * s.vx + s.vy * s.vy)
            + 0.5 * (self.inertia + me * self.eccentricity) * s.omega * s.omega
            + me * s.omega * (s.vy * cos - s.vx * sin)
            + 0.5 * self.stiffness_x * s.x * s.x
            + 0.5 * self.stiffness_y * s.y * s.y
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RotorState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub phi: f64,
    pub omega: f64,
}

impl RotorState {
    pub fn to_array(self) -> [f64; 6] {
        [self.x, self.y, self.vx, self.vy, self.phi, self.omega]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self { x: a[0], y: a[1], vx: a[2], vy: a[3], phi: a[4], omega: a[5] }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    fn axpy(self, h: f64, d: &RotorState) -> RotorState {
        let (a, b) = (self.to_array(), d.to_array());
        RotorState::from_array(std::array::from_fn(|i| a[i] + h * b[i]))
    }
}

/// Time derivative of the state with the supply voltage held at `voltage`.
pub fn rotor_derivative(state: &RotorState, voltage: f64, params: &RotorParams) -> Result<RotorState> {
    let me = params.unbalance_mass * params.eccentricity;
    let (sin, cos) = state.phi.sin_cos();
    let w2 = state.omega * state.omega;

    let mass_matrix = Matrix3::new(
        params.mass,
        0.0,
        -me * sin,
        0.0,
        params.mass,
        me * cos,
        -me * sin,
        me * cos,
        params.inertia + me * params.eccentricity,
    );
    let forces = Vector3::new(
        -params.damping_x * state.vx - params.stiffness_x * state.x + me * w2 * cos,
        -params.damping_y * state.vy - params.stiffness_y * state.y + me * w2 * sin,
        params.drive_torque(state.omega, voltage),
    );
    let acc = mass_matrix.lu().solve(&forces).ok_or(LdtError::SingularCoupling { phi: state.phi })?;

    Ok(RotorState { x: state.vx, y: state.vy, vx: acc[0], vy: acc[1], phi: state.omega, omega: acc[2] })
}

/// One classical RK4 step with the voltage held over the step.
pub fn integrate_step(state: &RotorState, voltage: f64, dt: f64, params: &RotorParams) -> Result<RotorState> {
    let k1 = rotor_derivative(state, voltage, params)?;
    let k2 = rotor_derivative(&state.axpy(0.5 * dt, &k1), voltage, params)?;
    let k3 = rotor_derivative(&state.axpy(0.5 * dt, &k2), voltage, params)?;
    let k4 = rotor_derivative(&state.axpy(dt, &k3), voltage, params)?;
    let (s, a, b, c, d) = (state.to_array(), k1.to_array(), k2.to_array(), k3.to_array(), k4.to_array());
    let next =
        RotorState::from_array(std::array::from_fn(|i| s[i] + dt / 6.0 * (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i])));
    if !next.is_finite() {
        return Err(LdtError::SimulationDiverged {
            experiment: None,
            detail: format!("non-finite state after step from {state:?} at V = {voltage}"),
        });
    }
    Ok(next)
}

/// Sampling and excitation settings shared by every experiment of a campaign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSettings {
    /// Samples per experiment `L`.
    pub length: usize,
    /// Sample period [s].
    pub dt: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Dwell range of each voltage level [s].
    pub dwell_min: f64,
    pub dwell_max: f64,
    /// Standard deviation of additive speed noise [rad/s]; 0 disables it.
    pub noise_std: f64,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self { length: 2000, dt: 5e-3, v_min: 0.0, v_max: 12.0, dwell_min: 0.5, dwell_max: 2.0, noise_std: 0.0 }
    }
}

impl ExperimentSettings {
    pub fn validate(&self) -> Result<()> {
        if self.length < 2 {
            return Err(LdtError::Config("input.length must be at least 2".into()));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(LdtError::Config(format!("input.dt must be positive, got {}", self.dt)));
        }
        if !(self.v_min.is_finite() && self.v_max.is_finite() && self.v_min <= self.v_max) {
            return Err(LdtError::Config("input voltage range must satisfy v_min <= v_max".into()));
        }
        if !(self.dwell_min > 0.0 && self.dwell_min <= self.dwell_max && self.dwell_max.is_finite()) {
            return Err(LdtError::Config("input dwell range must satisfy 0 < dwell_min <= dwell_max".into()));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(LdtError::Config("input.noise_std must be >= 0".into()));
        }
        Ok(())
    }
}

/// Random piecewise-constant supply voltage: uniform levels, uniform dwell.
pub fn generate_input(settings: &ExperimentSettings, rng: &mut impl Rng) -> Vec<f64> {
    let mut u = Vec::with_capacity(settings.length);
    while u.len() < settings.length {
        let level = if settings.v_max > settings.v_min {
            rng.gen_range(settings.v_min..=settings.v_max)
        } else {
            settings.v_min
        };
        let dwell = if settings.dwell_max > settings.dwell_min {
            rng.gen_range(settings.dwell_min..=settings.dwell_max)
        } else {
            settings.dwell_min
        };
        let samples = ((dwell / settings.dt).round() as usize).max(1);
        let take = samples.min(settings.length - u.len());
        u.extend(std::iter::repeat_n(level, take));
    }
    u
}

/// One fixed-length record of the physical twin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    /// 1-based position in the stream.
    pub index: usize,
    pub dt: f64,
    /// Supply voltage [V].
    pub u: Vec<f64>,
    /// Motor speed [rad/s].
    pub y: Vec<f64>,
    /// Ground truth, only for evaluation.
    pub e_true: f64,
    pub drift_onset: bool,
}

impl Experiment {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Writes `k,t,u,y` rows, plus a `y_hat` column when a prediction is given.
    pub fn write_csv<W: Write>(&self, mut out: W, prediction: Option<&[f64]>) -> Result<()> {
        if let Some(p) = prediction {
            if p.len() != self.len() {
                return Err(LdtError::LengthMismatch { expected: self.len(), actual: p.len() });
            }
        }
        let header = if prediction.is_some() { "k,t,u,y,y_hat" } else { "k,t,u,y" };
        writeln!(out, "{header}")?;
        for k in 0..self.len() {
            write!(out, "{},{},{},{}", k, g9(k as f64 * self.dt), g9(self.u[k]), g9(self.y[k]))?;
            if let Some(p) = prediction {
                write!(out, ",{}", g9(p[k]))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Simulates a voltage series from rest and returns the sampled speed.
pub fn simulate_speed(params: &RotorParams, u: &[f64], dt: f64) -> Result<Vec<f64>> {
    let mut state = RotorState::default();
    let mut y = Vec::with_capacity(u.len());
    for (k, &v) in u.iter().enumerate() {
        y.push(state.omega);
        if k + 1 < u.len() {
            state = integrate_step(&state, v, dt, params)?;
        }
    }
    Ok(y)
}

/// Runs experiment `index` of a campaign at eccentricity `e`. The input and
/// noise draws depend only on `(seed, index)`.
pub fn run_experiment(
    params: &RotorParams,
    settings: &ExperimentSettings,
    index: usize,
    e: f64,
    seed: u64,
) -> Result<Experiment> {
    if !(e.is_finite() && e >= 0.0) {
        return Err(LdtError::Config(format!("eccentricity must be >= 0, got {e}")));
    }
    let u = generate_input(settings, &mut stream_rng(seed, Stream::Input, index as u64));
    let params = params.with_eccentricity(e);
    let mut y = simulate_speed(&params, &u, settings.dt).map_err(|err| err.in_experiment(index))?;
    if settings.noise_std > 0.0 {
        let normal = Normal::new(0.0, settings.noise_std).map_err(|err| LdtError::Config(format!("noise: {err}")))?;
        let mut rng = stream_rng(seed, Stream::Noise, index as u64);
        for v in &mut y {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(Experiment { index, dt: settings.dt, u, y, e_true: e, drift_onset: false })
}

/// Segment-length and eccentricity range of the degradation staircase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSettings {
    /// Number of experiments `N`.
    pub experiments: usize,
    pub e_start: f64,
    pub e_end: f64,
    /// Inclusive range of experiments per constant-eccentricity segment.
    pub segment_min: usize,
    pub segment_max: usize,
}

impl Default for ScheduleSettings {
    fn default() -> Self {
        Self { experiments: 200, e_start: 0.0, e_end: 0.05, segment_min: 5, segment_max: 20 }
    }
}

/// Hidden eccentricity per experiment; only the evaluator sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationSchedule {
    pub e_values: Vec<f64>,
    /// 1-based indices of experiments whose eccentricity differs from the
    /// previous experiment.
    pub onsets: Vec<usize>,
}

impl DegradationSchedule {
    pub fn len(&self) -> usize {
        self.e_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e_values.is_empty()
    }

    /// Eccentricity of 1-based experiment `i`.
    pub fn e(&self, i: usize) -> f64 {
        self.e_values[i - 1]
    }

    pub fn is_onset(&self, i: usize) -> bool {
        i >= 2 && self.e_values[i - 1] != self.e_values[i - 2]
    }
}

/// Monotone staircase from `e_start` to `e_end` with random segment lengths.
/// Levels are evenly spaced over the segments that fit into `N`.
pub fn build_schedule(settings: &ScheduleSettings, seed: u64) -> Result<DegradationSchedule> {
    let n = settings.experiments;
    if n == 0 {
        return Err(LdtError::Config("schedule.experiments must be positive".into()));
    }
    if settings.segment_min == 0 || settings.segment_min > settings.segment_max {
        return Err(LdtError::Config(format!(
            "schedule segment range [{}, {}] is empty",
            settings.segment_min, settings.segment_max
        )));
    }
    let (e0, e1) = (settings.e_start, settings.e_end);
    if !(e0.is_finite() && e1.is_finite() && 0.0 <= e0 && e0 <= e1) {
        return Err(LdtError::Config(format!("schedule needs 0 <= e_start <= e_end, got [{e0}, {e1}]")));
    }

    let mut rng = stream_rng(seed, Stream::Schedule, 0);
    let mut lengths = Vec::new();
    let mut total = 0;
    while total < n {
        let len = rng.gen_range(settings.segment_min..=settings.segment_max).min(n - total);
        lengths.push(len);
        total += len;
    }

    let segments = lengths.len();
    let mut e_values = Vec::with_capacity(n);
    for (j, &len) in lengths.iter().enumerate() {
        let level = if segments == 1 { e0 } else { e0 + (e1 - e0) * j as f64 / (segments - 1) as f64 };
        e_values.extend(std::iter::repeat_n(level, len));
    }
    let onsets = (2..=n).filter(|&i| e_values[i - 1] != e_values[i - 2]).collect();
    Ok(DegradationSchedule { e_values, onsets })
}
