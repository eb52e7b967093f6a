//! CSV and JSON artifacts of campaigns and sweeps.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::config::{CampaignConfig, DetectorKind, ModelKind};
use crate::error::Result;
use crate::format::g9;
use crate::ldt::{per_eccentricity, CampaignResult, CampaignRow};

pub const CAMPAIGN_HEADER: &str = "i,e_true,drift_onset,max_error,signal,adapted";
pub const PER_E_HEADER: &str = "e,experiments,mme,original_mme,adaptations";
pub const SWEEP_HEADER: &str = "model,detector,theta_c,mme,adaptations,precision,recall";

pub fn write_campaign_csv<W: Write>(mut out: W, rows: &[CampaignRow]) -> Result<()> {
    writeln!(out, "{CAMPAIGN_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.i,
            g9(r.e_true),
            u8::from(r.drift_onset),
            g9(r.max_error),
            r.signal.value(),
            u8::from(r.adapted)
        )?;
    }
    Ok(())
}

pub fn write_per_e_csv<W: Write>(mut out: W, rows: &[CampaignRow]) -> Result<()> {
    writeln!(out, "{PER_E_HEADER}")?;
    for s in per_eccentricity(rows) {
        writeln!(out, "{},{},{},{},{}", g9(s.e), s.experiments, g9(s.mme), g9(s.original_mme), s.adaptations)?;
    }
    Ok(())
}

/// Aggregates written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiments: usize,
    pub mme: f64,
    pub original_mme: f64,
    pub adaptation_count: usize,
    pub precision: f64,
    pub recall: f64,
    pub precision_defined: bool,
    pub recall_defined: bool,
    pub seed: u64,
    pub config: CampaignConfig,
}

impl From<&CampaignResult> for Summary {
    fn from(r: &CampaignResult) -> Self {
        Self {
            experiments: r.rows.len(),
            mme: r.mme,
            original_mme: r.original_mme,
            adaptation_count: r.adaptation_count,
            precision: r.precision,
            recall: r.recall,
            precision_defined: r.precision_defined,
            recall_defined: r.recall_defined,
            seed: r.seed,
            config: r.config.clone(),
        }
    }
}

pub fn write_summary_json<W: Write>(mut out: W, result: &CampaignResult) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, &Summary::from(result))?;
    writeln!(out)?;
    Ok(())
}

/// One point of a threshold sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub model: ModelKind,
    pub detector: DetectorKind,
    pub theta_c: f64,
    pub mme: f64,
    pub adaptations: usize,
    pub precision: f64,
    pub recall: f64,
}

impl SweepRow {
    pub fn from_result(r: &CampaignResult) -> Self {
        Self {
            model: r.config.model.kind,
            detector: r.config.detector.kind,
            theta_c: r.config.detector.theta_c,
            mme: r.mme,
            adaptations: r.adaptation_count,
            precision: r.precision,
            recall: r.recall,
        }
    }
}

fn model_name(k: ModelKind) -> &'static str {
    match k {
        ModelKind::Linear => "linear",
        ModelKind::Hybrid => "hybrid",
    }
}

fn detector_name(k: DetectorKind) -> &'static str {
    match k {
        DetectorKind::Window => "window",
        DetectorKind::Threshold => "threshold",
        DetectorKind::Lddm => "lddm",
    }
}

pub fn write_sweep_csv<W: Write>(mut out: W, rows: &[SweepRow]) -> Result<()> {
    writeln!(out, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            model_name(r.model),
            detector_name(r.detector),
            g9(r.theta_c),
            g9(r.mme),
            r.adaptations,
            g9(r.precision),
            g9(r.recall)
        )?;
    }
    Ok(())
}
