//! The learning loop: memory, digital model, detector and adaptor, driven by
//! the degrading experiment stream, plus the campaign metrics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{CampaignConfig, ModelConfig, ModelKind};
use crate::detectors::{max_error, Detector, DetectorSignal};
use crate::error::{LdtError, Result};
use crate::hybrid::HybridModel;
use crate::rotor_sim::{build_schedule, run_experiment, DegradationSchedule, Experiment};
use crate::seed::{stream_rng, Stream};
use crate::sysid::{identify_linear_up_to, LinearModel};

/// Experiments after an onset (inclusive of the onset) within which a
/// positive signal counts as a detection.
pub const DETECTION_HORIZON: usize = 5;

/// The simulated physical twin: a schedule plus an experiment generator.
#[derive(Debug, Clone)]
pub struct PhysicalTwin {
    config: CampaignConfig,
    schedule: DegradationSchedule,
}

impl PhysicalTwin {
    pub fn new(config: &CampaignConfig) -> Result<Self> {
        let schedule = build_schedule(&config.schedule, config.seed)?;
        Ok(Self { config: config.clone(), schedule })
    }

    pub fn schedule(&self) -> &DegradationSchedule {
        &self.schedule
    }

    pub fn len(&self) -> usize {
        self.schedule.len()
    }

    pub fn is_empty(&self) -> bool {
        self.schedule.is_empty()
    }

    /// Experiment `i`, 1-based.
    pub fn experiment(&self, i: usize) -> Result<Experiment> {
        if i == 0 || i > self.len() {
            return Err(LdtError::Config(format!("experiment index {i} outside [1, {}]", self.len())));
        }
        let mut e = run_experiment(&self.config.rotor, &self.config.input, i, self.schedule.e(i), self.config.seed)?;
        e.drift_onset = self.schedule.is_onset(i);
        Ok(e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DigitalModel {
    Linear(LinearModel),
    Hybrid(HybridModel),
}

impl DigitalModel {
    /// The never-adapted hybrid model.
    pub fn original(config: &CampaignConfig) -> Result<HybridModel> {
        HybridModel::physics_only(&config.rotor, config.input.dt, config.model.residual_input)
    }

    pub fn rollout(&self, u: &[f64], y0: f64) -> Result<Vec<f64>> {
        match self {
            DigitalModel::Linear(m) => m.rollout(u, y0),
            DigitalModel::Hybrid(m) => m.rollout(u, y0),
        }
    }

    /// A new model fitted to `dataset`: linear re-identification, or
    /// retraining of the residual part of the hybrid model.
    pub fn adapt(&self, dataset: &[&Experiment], config: &ModelConfig, seed: u64) -> Result<DigitalModel> {
        match self {
            DigitalModel::Linear(m) => {
                let records: Vec<(&[f64], &[f64])> = dataset.iter().map(|e| (&e.u[..], &e.y[..])).collect();
                Ok(DigitalModel::Linear(identify_linear_up_to(&records, config.order, m.dt)?))
            }
            DigitalModel::Hybrid(m) => Ok(DigitalModel::Hybrid(m.retrain(dataset, &config.gp, seed)?)),
        }
    }
}

/// One experiment's prediction log entry.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub index: usize,
    pub predicted: Vec<f64>,
    pub measured: Vec<f64>,
    pub max_error: f64,
    pub signal: DetectorSignal,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Memory {
    /// Experiments labeled as warning since the last adaptation.
    pub warning: Vec<Experiment>,
    pub predictions: Vec<PredictionRecord>,
    /// Indices of experiments that triggered an adaptation.
    pub adaptations: Vec<usize>,
}

/// Per-experiment outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignRow {
    pub i: usize,
    pub e_true: f64,
    pub drift_onset: bool,
    pub max_error: f64,
    pub signal: DetectorSignal,
    pub adapted: bool,
    /// Maximum error of the never-adapted model on the same experiment.
    pub original_max_error: f64,
    /// Size of the warning buffer after processing the experiment.
    pub warning_buffer: usize,
}

/// The learning digital twin.
#[derive(Debug, Clone)]
pub struct LearningTwin {
    model: DigitalModel,
    detector: Detector,
    memory: Memory,
    model_config: ModelConfig,
    seed: u64,
}

impl LearningTwin {
    pub fn new(model: DigitalModel, detector: Detector, model_config: ModelConfig, seed: u64) -> Self {
        Self { model, detector, memory: Memory::default(), model_config, seed }
    }

    pub fn model(&self) -> &DigitalModel {
        &self.model
    }

    pub fn detector(&self) -> &Detector {
        &self.detector
    }

    pub fn memory(&self) -> &Memory {
        &self.memory
    }

    /// Predicts, detects and, when the detector fires, adapts on the warning
    /// buffer plus the current experiment. Returns the prediction, signal and
    /// whether an adaptation happened.
    pub fn process(&mut self, experiment: &Experiment) -> Result<(Vec<f64>, DetectorSignal, bool)> {
        let y0 = experiment.y.first().copied().ok_or(LdtError::LengthMismatch { expected: 1, actual: 0 })?;
        let predicted = self.model.rollout(&experiment.u, y0)?;
        let error = max_error(&predicted, &experiment.y)?;
        let (signal, detector) = self.detector.step(experiment.index, &predicted, &experiment.y)?;
        self.detector = detector;

        let mut adapted = false;
        match signal {
            DetectorSignal::Ok => {}
            DetectorSignal::Warning => self.memory.warning.push(experiment.clone()),
            DetectorSignal::Drift => {
                let mut dataset: Vec<&Experiment> = self.memory.warning.iter().collect();
                dataset.push(experiment);
                let seed = stream_rng(self.seed, Stream::GpSubsample, experiment.index as u64).gen();
                self.model = self
                    .model
                    .adapt(&dataset, &self.model_config, seed)
                    .map_err(|e| LdtError::Adaptation { experiment: experiment.index, source: Box::new(e) })?;
                self.memory.warning.clear();
                self.memory.adaptations.push(experiment.index);
                adapted = true;
            }
        }
        self.memory.predictions.push(PredictionRecord {
            index: experiment.index,
            predicted: predicted.clone(),
            measured: experiment.y.clone(),
            max_error: error,
            signal,
        });
        Ok((predicted, signal, adapted))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub rows: Vec<CampaignRow>,
    pub mme: f64,
    /// MME of the never-adapted model over the same stream.
    pub original_mme: f64,
    pub adaptation_count: usize,
    pub precision: f64,
    pub recall: f64,
    /// False when there were no positive signals and `precision` is 0 by
    /// convention.
    pub precision_defined: bool,
    /// False when there were no drift onsets and `recall` is 0 by convention.
    pub recall_defined: bool,
    pub seed: u64,
    pub config: CampaignConfig,
}

/// Builds the initial model: a linear model identified on the first
/// experiment, or the physics-only hybrid model.
pub fn initial_model(config: &CampaignConfig, first: &Experiment) -> Result<DigitalModel> {
    match config.model.kind {
        ModelKind::Linear => {
            let records = [(&first.u[..], &first.y[..])];
            identify_linear_up_to(&records, config.model.order, config.input.dt)
                .map(DigitalModel::Linear)
                .map_err(|e| LdtError::Adaptation { experiment: first.index, source: Box::new(e) })
        }
        ModelKind::Hybrid => Ok(DigitalModel::Hybrid(DigitalModel::original(config)?)),
    }
}

/// Runs the stream through a fresh learning twin and returns the twin with
/// the result.
pub fn run_campaign_with_twin(config: &CampaignConfig) -> Result<(CampaignResult, LearningTwin)> {
    config.validate()?;
    let physical = PhysicalTwin::new(config)?;
    let original = DigitalModel::original(config)?;
    let first = physical.experiment(1)?;
    let mut twin =
        LearningTwin::new(initial_model(config, &first)?, config.detector.build()?, config.model.clone(), config.seed);

    let mut rows = Vec::with_capacity(physical.len());
    for i in 1..=physical.len() {
        let experiment = if i == 1 { first.clone() } else { physical.experiment(i)? };
        let baseline = original.rollout(&experiment.u, experiment.y[0])?;
        let original_max_error = max_error(&baseline, &experiment.y)?;
        twin.process(&experiment)?;
        let record = twin.memory.predictions.last().expect("process logs every experiment");
        rows.push(CampaignRow {
            i,
            e_true: experiment.e_true,
            drift_onset: experiment.drift_onset,
            max_error: record.max_error,
            signal: record.signal,
            adapted: twin.memory.adaptations.last() == Some(&i),
            original_max_error,
            warning_buffer: twin.memory.warning.len(),
        });
    }
    let result = summarize(rows, config)?;
    Ok((result, twin))
}

pub fn run_campaign(config: &CampaignConfig) -> Result<CampaignResult> {
    run_campaign_with_twin(config).map(|(r, _)| r)
}

/// Aggregates a row log into a campaign result.
pub fn summarize(rows: Vec<CampaignRow>, config: &CampaignConfig) -> Result<CampaignResult> {
    let mme = compute_mme(&rows)?;
    let original: Vec<f64> = rows.iter().map(|r| r.original_max_error).collect();
    let original_mme = original.iter().sum::<f64>() / original.len() as f64;
    let metrics = compute_precision_recall(&rows);
    Ok(CampaignResult {
        mme,
        original_mme,
        adaptation_count: rows.iter().filter(|r| r.adapted).count(),
        precision: metrics.precision,
        recall: metrics.recall,
        precision_defined: metrics.positives > 0,
        recall_defined: metrics.onsets > 0,
        seed: config.seed,
        config: config.clone(),
        rows,
    })
}

pub fn compute_mme(rows: &[CampaignRow]) -> Result<f64> {
    if rows.is_empty() {
        return Err(LdtError::Config("MME of an empty campaign".into()));
    }
    Ok(rows.iter().map(|r| r.max_error).sum::<f64>() / rows.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionMetrics {
    pub precision: f64,
    pub recall: f64,
    pub onsets: usize,
    pub positives: usize,
    pub detected_onsets: usize,
    pub true_positives: usize,
}

/// An onset at `j` is detected by a positive signal in `[j, j + 5]`; a
/// positive at `i` is true when an onset lies in `[i - 5, i]`. Empty
/// denominators give 0.
pub fn compute_precision_recall(rows: &[CampaignRow]) -> DetectionMetrics {
    let onsets: Vec<usize> = rows.iter().filter(|r| r.drift_onset).map(|r| r.i).collect();
    let positives: Vec<usize> = rows.iter().filter(|r| r.signal == DetectorSignal::Drift).map(|r| r.i).collect();

    let within = |sorted: &[usize], lo: usize, hi: usize| {
        let start = sorted.partition_point(|&v| v < lo);
        start < sorted.len() && sorted[start] <= hi
    };
    let detected_onsets = onsets.iter().filter(|&&j| within(&positives, j, j + DETECTION_HORIZON)).count();
    let true_positives = positives.iter().filter(|&&i| within(&onsets, i.saturating_sub(DETECTION_HORIZON), i)).count();
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    DetectionMetrics {
        precision: ratio(true_positives, positives.len()),
        recall: ratio(detected_onsets, onsets.len()),
        onsets: onsets.len(),
        positives: positives.len(),
        detected_onsets,
        true_positives,
    }
}

/// One campaign per drift threshold with `theta_w = theta_c / 2` and
/// `theta_d = theta_c`, all on the same stream.
pub fn sweep_thresholds(config: &CampaignConfig, grid: &[f64]) -> Result<Vec<CampaignResult>> {
    if grid.is_empty() {
        return Err(LdtError::Config("threshold grid is empty".into()));
    }
    grid.iter()
        .map(|&theta| {
            let mut cfg = config.clone();
            cfg.detector = cfg.detector.with_sweep_threshold(theta);
            run_campaign(&cfg)
        })
        .collect()
}

/// MME and adaptation count per distinct eccentricity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EccentricityStats {
    pub e: f64,
    pub experiments: usize,
    pub mme: f64,
    pub original_mme: f64,
    pub adaptations: usize,
}

pub fn per_eccentricity(rows: &[CampaignRow]) -> Vec<EccentricityStats> {
    let mut out: Vec<EccentricityStats> = Vec::new();
    for r in rows {
        if out.last().is_none_or(|s| s.e != r.e_true) {
            out.push(EccentricityStats { e: r.e_true, experiments: 0, mme: 0.0, original_mme: 0.0, adaptations: 0 });
        }
        let s = out.last_mut().expect("pushed above");
        s.experiments += 1;
        s.mme += r.max_error;
        s.original_mme += r.original_max_error;
        s.adaptations += usize::from(r.adapted);
    }
    for s in &mut out {
        s.mme /= s.experiments as f64;
        s.original_mme /= s.experiments as f64;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DetectorKind;

    fn row(i: usize, onset: bool, signal: DetectorSignal, err: f64) -> CampaignRow {
        CampaignRow {
            i,
            e_true: 0.0,
            drift_onset: onset,
            max_error: err,
            signal,
            adapted: signal == DetectorSignal::Drift,
            original_max_error: err,
            warning_buffer: 0,
        }
    }

    fn log(n: usize, onsets: &[usize], positives: &[usize]) -> Vec<CampaignRow> {
        (1..=n)
            .map(|i| {
                let sig = if positives.contains(&i) { DetectorSignal::Drift } else { DetectorSignal::Ok };
                row(i, onsets.contains(&i), sig, 1.0)
            })
            .collect()
    }

    #[test]
    fn precision_recall_conventions() {
        let m = compute_precision_recall(&log(20, &[], &[]));
        assert_eq!((m.precision, m.recall), (0.0, 0.0));
        let m = compute_precision_recall(&log(20, &[10], &[12]));
        assert_eq!((m.precision, m.recall), (1.0, 1.0));
        let m = compute_precision_recall(&log(60, &[10, 50], &[12, 30]));
        assert_eq!((m.precision, m.recall), (0.5, 0.5));
        // Window edges are inclusive.
        let m = compute_precision_recall(&log(30, &[10], &[10, 15, 16]));
        assert_eq!((m.true_positives, m.detected_onsets), (2, 1));
    }

    #[test]
    fn mme_cases() {
        assert_eq!(compute_mme(&[row(1, false, DetectorSignal::Ok, 7.0)]).unwrap(), 7.0);
        let rows = [row(1, false, DetectorSignal::Ok, 2.0), row(2, false, DetectorSignal::Ok, 4.0)];
        assert_eq!(compute_mme(&rows).unwrap(), 3.0);
        assert!(compute_mme(&[]).is_err());
    }

    #[test]
    fn per_e_groups_consecutive_levels() {
        let mut rows = log(6, &[3], &[4]);
        for r in &mut rows {
            r.e_true = if r.i < 3 { 0.0 } else { 0.01 };
            r.max_error = r.i as f64;
        }
        let stats = per_eccentricity(&rows);
        assert_eq!(stats.len(), 2);
        assert_eq!((stats[0].experiments, stats[0].mme, stats[0].adaptations), (2, 1.5, 0));
        assert_eq!((stats[1].experiments, stats[1].mme, stats[1].adaptations), (4, 4.5, 1));
    }

    fn small_config() -> CampaignConfig {
        let mut cfg = CampaignConfig::default();
        cfg.schedule.experiments = 12;
        cfg.schedule.segment_min = 3;
        cfg.schedule.segment_max = 5;
        cfg.input.length = 400;
        cfg
    }

    #[test]
    fn infinite_threshold_never_adapts() {
        let mut cfg = small_config();
        cfg.detector.kind = DetectorKind::Threshold;
        cfg.detector.theta_c = f64::INFINITY;
        cfg.detector.theta_w = f64::INFINITY;
        let r = run_campaign(&cfg).unwrap();
        assert_eq!(r.adaptation_count, 0);
        assert_eq!(r.mme, r.original_mme);
        for row in &r.rows {
            assert_eq!(row.max_error, row.original_max_error);
        }
    }

    #[test]
    fn window_of_one_adapts_every_experiment() {
        let mut cfg = small_config();
        cfg.detector.kind = DetectorKind::Window;
        cfg.detector.window = 1;
        for kind in [ModelKind::Hybrid, ModelKind::Linear] {
            cfg.model.kind = kind;
            let r = run_campaign(&cfg).unwrap();
            assert_eq!(r.adaptation_count, cfg.schedule.experiments);
            assert!(r.rows.iter().all(|row| row.warning_buffer == 0));
        }
    }

    #[test]
    fn warning_buffer_lifecycle() {
        let mut cfg = small_config();
        cfg.detector.kind = DetectorKind::Threshold;
        cfg.detector.theta_c = 8.0;
        cfg.detector.theta_w = 0.5;
        cfg.schedule.e_end = 0.04;
        let r = run_campaign(&cfg).unwrap();
        let mut size = 0;
        for row in &r.rows {
            match row.signal {
                DetectorSignal::Drift => assert_eq!(row.warning_buffer, 0),
                DetectorSignal::Warning => assert_eq!(row.warning_buffer, size + 1),
                DetectorSignal::Ok => assert_eq!(row.warning_buffer, size),
            }
            assert_eq!(row.adapted, row.signal == DetectorSignal::Drift);
            size = row.warning_buffer;
        }
    }

    #[test]
    fn physical_twin_bounds() {
        let twin = PhysicalTwin::new(&small_config()).unwrap();
        assert!(twin.experiment(0).is_err());
        assert!(twin.experiment(13).is_err());
        let e = twin.experiment(12).unwrap();
        assert_eq!(e.e_true, twin.schedule().e(12));
    }

    #[test]
    fn empty_sweep_grid_is_rejected() {
        assert!(sweep_thresholds(&small_config(), &[]).is_err());
    }
    #[test]
    fn single_point_sweep_equals_campaign() {
        let mut cfg = small_config();
        cfg.model.kind = ModelKind::Linear;
        cfg.detector.kind = DetectorKind::Threshold;
        let swept = sweep_thresholds(&cfg, &[4.0]).unwrap();
        cfg.detector = cfg.detector.with_sweep_threshold(4.0);
        assert_eq!(swept, vec![run_campaign(&cfg).unwrap()]);
    }

    #[test]
    fn model_depends_only_on_earlier_experiments() {
        let mut cfg = small_config();
        cfg.detector.kind = DetectorKind::Threshold;
        cfg.detector = cfg.detector.with_sweep_threshold(2.0);
        cfg.schedule.e_end = 0.04;
        let physical = PhysicalTwin::new(&cfg).unwrap();
        let experiments: Vec<Experiment> = (1..=physical.len()).map(|i| physical.experiment(i).unwrap()).collect();
        let fresh = || {
            let model = initial_model(&cfg, &experiments[0]).unwrap();
            LearningTwin::new(model, cfg.detector.build().unwrap(), cfg.model.clone(), cfg.seed)
        };

        let mut full = fresh();
        let mut snapshots = Vec::new();
        for e in &experiments {
            snapshots.push(serde_json::to_string(full.model()).unwrap());
            let (pred, _, _) = full.process(e).unwrap();
            assert_eq!(pred, full.memory().predictions.last().unwrap().predicted);
        }
        assert!(!full.memory().adaptations.is_empty());
        for i in [1, 4, experiments.len()] {
            let mut truncated = fresh();
            for e in &experiments[..i - 1] {
                truncated.process(e).unwrap();
            }
            assert_eq!(serde_json::to_string(truncated.model()).unwrap(), snapshots[i - 1]);
            assert_eq!(truncated.detector(), &full_detector_at(&cfg, &experiments, i - 1));
        }
    }

    fn full_detector_at(cfg: &CampaignConfig, experiments: &[Experiment], steps: usize) -> Detector {
        let model = initial_model(cfg, &experiments[0]).unwrap();
        let mut twin = LearningTwin::new(model, cfg.detector.build().unwrap(), cfg.model.clone(), cfg.seed);
        for e in &experiments[..steps] {
            twin.process(e).unwrap();
        }
        twin.detector().clone()
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn summary_matches_row_log(
                cells in prop::collection::vec((any::<bool>(), -1i8..=1, 0.0f64..50.0, 0.0f64..50.0), 1..80)
            ) {
                let rows: Vec<CampaignRow> = cells
                    .iter()
                    .enumerate()
                    .map(|(k, &(onset, sig, err, orig))| {
                        let signal = DetectorSignal::from_value(sig).unwrap();
                        CampaignRow {
                            i: k + 1,
                            e_true: 0.0,
                            drift_onset: onset,
                            max_error: err,
                            signal,
                            adapted: signal == DetectorSignal::Drift,
                            original_max_error: orig,
                            warning_buffer: 0,
                        }
                    })
                    .collect();
                let r = summarize(rows.clone(), &CampaignConfig::default()).unwrap();
                let n = rows.len() as f64;
                let mme: f64 = rows.iter().map(|r| r.max_error).sum::<f64>() / n;
                prop_assert!((r.mme - mme).abs() <= 1e-12 * mme.max(1.0));
                prop_assert_eq!(r.adaptation_count, rows.iter().filter(|r| r.adapted).count());
                // Quadratic scan of the detection windows.
                let onsets: Vec<usize> = rows.iter().filter(|r| r.drift_onset).map(|r| r.i).collect();
                let pos: Vec<usize> = rows.iter().filter(|r| r.signal == DetectorSignal::Drift).map(|r| r.i).collect();
                let hit = onsets.iter().filter(|&&j| pos.iter().any(|&i| i >= j && i <= j + 5)).count();
                let tp = pos.iter().filter(|&&i| onsets.iter().any(|&j| j <= i && i <= j + 5)).count();
                let precision = if pos.is_empty() { 0.0 } else { tp as f64 / pos.len() as f64 };
                let recall = if onsets.is_empty() { 0.0 } else { hit as f64 / onsets.len() as f64 };
                prop_assert_eq!(r.precision, precision);
                prop_assert_eq!(r.recall, recall);
                prop_assert_eq!(r.precision_defined, !pos.is_empty());
                prop_assert_eq!(r.recall_defined, !onsets.is_empty());
            }
        }
    }
}
