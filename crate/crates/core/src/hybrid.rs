//! Hybrid digital model: a frozen eccentricity-free motor model predicts the
//! one-step speed increment and a Gaussian process learns what it misses.
//!
//! ```text
//! dy      = f_p(u(k), y(k)) + f_d(y(k))
//! y(k+1)  = y(k) + dy
//! ```
//!
//! Rollouts are closed loop: only the initial speed comes from measurements.

use serde::{Deserialize, Serialize};

use crate::error::{LdtError, Result};
use crate::gp::{GpConfig, GpModel};
use crate::rotor_sim::{integrate_step, Experiment, RotorParams, RotorState};

/// Which signals feed the residual model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualInput {
    /// `f_d(y(k))`.
    #[default]
    Y,
    /// `f_d(u(k), y(k))`.
    Uy,
}

impl ResidualInput {
    fn dim(self) -> usize {
        match self {
            ResidualInput::Y => 1,
            ResidualInput::Uy => 2,
        }
    }

    fn push_row(self, row: &mut Vec<f64>, u: f64, y: f64) {
        if self == ResidualInput::Uy {
            row.push(u);
        }
        row.push(y);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HybridModel {
    /// Motor parameters of the physical part; eccentricity is always zero.
    motor: RotorParams,
    dt: f64,
    residual_input: ResidualInput,
    data: Option<GpModel>,
}

/// Teacher-forced training pairs for the residual model.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualDataset {
    pub dim: usize,
    /// Row-major inputs, `targets.len()` rows of width `dim`.
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
}

impl ResidualDataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

impl HybridModel {
    /// The original model: physics only, no residual correction.
    pub fn physics_only(motor: &RotorParams, dt: f64, residual_input: ResidualInput) -> Result<Self> {
        let motor = motor.with_eccentricity(0.0);
        motor.validate()?;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(LdtError::Config(format!("sample period must be positive, got {dt}")));
        }
        Ok(Self { motor, dt, residual_input, data: None })
    }

    pub fn motor(&self) -> &RotorParams {
        &self.motor
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn residual_input(&self) -> ResidualInput {
        self.residual_input
    }

    pub fn data_model(&self) -> Option<&GpModel> {
        self.data.as_ref()
    }

    /// Speed increment of the eccentricity-free motor over one sample.
    pub fn physical_increment(&self, u: f64, y: f64) -> Result<f64> {
        let start = RotorState { omega: y, ..Default::default() };
        let next = integrate_step(&start, u, self.dt, &self.motor)?;
        Ok(next.omega - y)
    }

    fn residual(&self, row: &mut Vec<f64>, u: f64, y: f64) -> Result<f64> {
        match &self.data {
            None => Ok(0.0),
            Some(gp) => {
                row.clear();
                self.residual_input.push_row(row, u, y);
                gp.predict(row)
            }
        }
    }

    pub fn rollout(&self, u: &[f64], y0: f64) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(u.len());
        if u.is_empty() {
            return Ok(out);
        }
        let mut row = Vec::with_capacity(2);
        let mut y = y0;
        out.push(y);
        for (k, &uk) in u[..u.len() - 1].iter().enumerate() {
            let fp = self.physical_increment(uk, y).map_err(|_| LdtError::RolloutDiverged { step: k + 1 })?;
            let fd = self.residual(&mut row, uk, y)?;
            y += fp + fd;
            if !y.is_finite() {
                return Err(LdtError::RolloutDiverged { step: k + 1 });
            }
            out.push(y);
        }
        Ok(out)
    }

    /// Residual targets `(y(k+1) - y(k)) - f_p(u(k), y(k))` from measured speeds.
    pub fn residual_dataset(&self, experiments: &[&Experiment]) -> Result<ResidualDataset> {
        if experiments.is_empty() {
            return Err(LdtError::GpFit("no experiments to build residuals from".into()));
        }
        let dim = self.residual_input.dim();
        let size: usize = experiments.iter().map(|e| e.len().saturating_sub(1)).sum();
        let mut inputs = Vec::with_capacity(size * dim);
        let mut targets = Vec::with_capacity(size);
        for e in experiments {
            for k in 0..e.len().saturating_sub(1) {
                let fp = self.physical_increment(e.u[k], e.y[k])?;
                self.residual_input.push_row(&mut inputs, e.u[k], e.y[k]);
                targets.push(e.y[k + 1] - e.y[k] - fp);
            }
        }
        Ok(ResidualDataset { dim, inputs, targets })
    }

    /// A new model whose residual part is retrained from scratch on
    /// `experiments`. The physical part is carried over unchanged.
    pub fn retrain(&self, experiments: &[&Experiment], gp: &GpConfig, seed: u64) -> Result<Self> {
        let data = self.residual_dataset(experiments)?;
        let model = GpModel::fit(&data.inputs, data.dim, &data.targets, gp, seed)?;
        Ok(Self { data: Some(model), ..self.clone() })
    }

    pub fn with_data_model(&self, data: Option<GpModel>) -> Result<Self> {
        if let Some(gp) = &data {
            if gp.input_dim() != self.residual_input.dim() {
                return Err(LdtError::LengthMismatch { expected: self.residual_input.dim(), actual: gp.input_dim() });
            }
        }
        Ok(Self { data, ..self.clone() })
    }
}
