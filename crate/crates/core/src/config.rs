//! Campaign configuration, read from a single JSON document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detectors::{Detector, LddmConfig, LddmDenominator, LddmState, ThresholdConfig, WindowConfig};
use crate::error::{LdtError, Result};
use crate::gp::GpConfig;
use crate::hybrid::ResidualInput;
use crate::rotor_sim::{ExperimentSettings, RotorParams, ScheduleSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Window,
    Threshold,
    Lddm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Maximum order of the linear model.
    pub order: usize,
    pub residual_input: ResidualInput,
    pub gp: GpConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { kind: ModelKind::Hybrid, order: 3, residual_input: ResidualInput::Y, gp: GpConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub kind: DetectorKind,
    /// Window length in experiments.
    pub window: usize,
    /// Drift threshold on the maximum error [rad/s].
    pub theta_c: f64,
    /// Warning threshold on the maximum error [rad/s].
    pub theta_w: f64,
    /// Per-sample error threshold of LDDM [rad/s].
    pub theta_d: f64,
    pub lddm_denominator: LddmDenominator,
    pub s_floor: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            kind: DetectorKind::Lddm,
            window: 10,
            theta_c: 6.0,
            theta_w: 3.0,
            theta_d: 6.0,
            lddm_denominator: LddmDenominator::SinceReset,
            s_floor: true,
        }
    }
}

impl DetectorConfig {
    pub fn build(&self) -> Result<Detector> {
        match self.kind {
            DetectorKind::Window => {
                if self.window < 1 {
                    return Err(LdtError::Config("detector.window must be at least 1".into()));
                }
                Ok(Detector::Window(WindowConfig { length: self.window }))
            }
            DetectorKind::Threshold => Ok(Detector::Threshold(ThresholdConfig::new(self.theta_c, self.theta_w)?)),
            DetectorKind::Lddm => {
                if !(self.theta_d.is_finite() && self.theta_d >= 0.0) {
                    return Err(LdtError::Config("detector.theta_d must be finite and >= 0".into()));
                }
                Ok(Detector::Lddm(LddmState::new(LddmConfig {
                    error_threshold: self.theta_d,
                    denominator: self.lddm_denominator,
                    s_floor: self.s_floor,
                })))
            }
        }
    }

    /// Ties every threshold to one sweep value: `theta_w = theta_c / 2` and
    /// `theta_d = theta_c`.
    pub fn with_sweep_threshold(&self, theta: f64) -> Self {
        Self { theta_c: theta, theta_w: theta / 2.0, theta_d: theta, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CampaignConfig {
    pub rotor: RotorParams,
    pub schedule: ScheduleSettings,
    pub input: ExperimentSettings,
    pub model: ModelConfig,
    pub detector: DetectorConfig,
    pub seed: u64,
    /// Drift thresholds for `sweep`.
    pub sweep_grid: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            rotor: RotorParams::default(),
            schedule: ScheduleSettings::default(),
            input: ExperimentSettings::default(),
            model: ModelConfig::default(),
            detector: DetectorConfig::default(),
            seed: 42,
            sweep_grid: vec![2.0, 4.0, 6.0, 8.0, 10.0],
            output_dir: None,
        }
    }
}

impl CampaignConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.rotor.validate()?;
        self.input.validate()?;
        if self.schedule.experiments == 0 {
            return Err(LdtError::Config("schedule.experiments must be positive".into()));
        }
        if self.model.order < 1 {
            return Err(LdtError::Config("model.order must be at least 1".into()));
        }
        if self.model.kind == ModelKind::Linear && self.input.length < 10 * self.model.order {
            return Err(LdtError::Config(format!(
                "input.length {} is too short for a linear model of order {}",
                self.input.length, self.model.order
            )));
        }
        self.model.gp.validate()?;
        self.detector.build()?;
        if self.sweep_grid.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(LdtError::Config("sweep_grid values must be positive".into()));
        }
        Ok(())
    }
}
