//! Drift detectors comparing one experiment's prediction with its
//! measurement.
//!
//! All detectors are values: an update consumes the current state and
//! returns the next one together with the signal.

use serde::{Deserialize, Serialize};

use crate::error::{LdtError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DetectorSignal {
    Drift,
    Warning,
    Ok,
}

impl DetectorSignal {
    /// `+1`, `0` or `-1`.
    pub fn value(self) -> i8 {
        match self {
            DetectorSignal::Drift => 1,
            DetectorSignal::Warning => 0,
            DetectorSignal::Ok => -1,
        }
    }

    pub fn from_value(v: i8) -> Option<Self> {
        match v {
            1 => Some(DetectorSignal::Drift),
            0 => Some(DetectorSignal::Warning),
            -1 => Some(DetectorSignal::Ok),
            _ => None,
        }
    }
}

impl Serialize for DetectorSignal {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_i8(self.value())
    }
}

impl<'de> Deserialize<'de> for DetectorSignal {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = i8::deserialize(d)?;
        Self::from_value(v).ok_or_else(|| serde::de::Error::custom(format!("invalid signal {v}")))
    }
}

/// Largest absolute deviation between prediction and measurement.
pub fn max_error(predicted: &[f64], measured: &[f64]) -> Result<f64> {
    if predicted.len() != measured.len() {
        return Err(LdtError::LengthMismatch { expected: measured.len(), actual: predicted.len() });
    }
    if measured.is_empty() {
        return Err(LdtError::LengthMismatch { expected: 1, actual: 0 });
    }
    Ok(predicted.iter().zip(measured).map(|(p, m)| (m - p).abs()).fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    /// Adaptation threshold.
    pub drift: f64,
    /// Warning threshold, at most `drift`.
    pub warning: f64,
}

impl ThresholdConfig {
    pub fn new(drift: f64, warning: f64) -> Result<Self> {
        let cfg = Self { drift, warning };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.warning > 0.0 && self.warning <= self.drift) || self.warning.is_nan() {
            return Err(LdtError::Config(format!(
                "thresholds need 0 < warning <= drift, got warning {} drift {}",
                self.warning, self.drift
            )));
        }
        Ok(())
    }

    pub fn signal(&self, error: f64) -> DetectorSignal {
        if error > self.drift {
            DetectorSignal::Drift
        } else if error > self.warning {
            DetectorSignal::Warning
        } else {
            DetectorSignal::Ok
        }
    }
}

pub fn threshold_detect(predicted: &[f64], measured: &[f64], cfg: &ThresholdConfig) -> Result<DetectorSignal> {
    Ok(cfg.signal(max_error(predicted, measured)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    /// Adaptation period in experiments.
    pub length: usize,
}

/// Passive detector: drift every `length` experiments, never a warning.
pub fn window_detect(index: usize, cfg: &WindowConfig) -> DetectorSignal {
    if cfg.length > 0 && index > 0 && index.is_multiple_of(cfg.length) {
        DetectorSignal::Drift
    } else {
        DetectorSignal::Ok
    }
}

/// Sample count used in the standard deviation of the error rate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LddmDenominator {
    /// Samples since the start or the last drift.
    #[default]
    SinceReset,
    /// Global experiment index times the experiment length.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LddmConfig {
    /// Per-sample error threshold.
    pub error_threshold: f64,
    pub denominator: LddmDenominator,
    /// Adds `1/n` to `s_min` in the comparisons, where `n` is the sample count
    /// at which the registers were last stored. Without it a perfect first
    /// experiment locks `s_min` at zero and any later error fires.
    pub s_floor: bool,
}

impl LddmConfig {
    pub fn new(error_threshold: f64) -> Self {
        Self { error_threshold, denominator: LddmDenominator::SinceReset, s_floor: true }
    }
}

/// Error-rate drift detector with minimum registers.
#[derive(Debug, Clone, PartialEq)]
pub struct LddmState {
    pub config: LddmConfig,
    pub error_count: u64,
    pub sample_count: u64,
    pub p_min: f64,
    pub s_min: f64,
    /// Denominator in force when the registers were stored.
    pub register_samples: u64,
    /// Experiments seen over the detector's lifetime, across resets.
    pub experiments_seen: u64,
    /// Experiment length, fixed by the first update.
    pub length: Option<usize>,
}

/// Outcome of the three-way comparison on `p + s`.
pub fn lddm_signal(p: f64, s: f64, p_min: f64, s_min: f64) -> DetectorSignal {
    if p + s >= p_min + 3.0 * s_min {
        DetectorSignal::Drift
    } else if p + s >= p_min + 2.0 * s_min {
        DetectorSignal::Warning
    } else {
        DetectorSignal::Ok
    }
}

impl LddmState {
    pub fn new(config: LddmConfig) -> Self {
        Self {
            config,
            error_count: 0,
            sample_count: 0,
            p_min: f64::INFINITY,
            s_min: f64::INFINITY,
            register_samples: 0,
            experiments_seen: 0,
            length: None,
        }
    }

    /// Current `(p, s)` for the accumulated counts.
    fn rate(&self) -> (f64, f64) {
        let p = self.error_count as f64 / self.sample_count as f64;
        let denom = match self.config.denominator {
            LddmDenominator::SinceReset => self.sample_count,
            LddmDenominator::Global => self.experiments_seen * self.length.unwrap_or(0) as u64,
        };
        (p, (p * (1.0 - p) / denom as f64).sqrt())
    }

    fn reset(&self) -> Self {
        Self { experiments_seen: self.experiments_seen, length: self.length, ..Self::new(self.config) }
    }

    pub fn update(&self, predicted: &[f64], measured: &[f64]) -> Result<(DetectorSignal, LddmState)> {
        if predicted.len() != measured.len() {
            return Err(LdtError::LengthMismatch { expected: measured.len(), actual: predicted.len() });
        }
        let len = measured.len();
        if len == 0 {
            return Err(LdtError::LengthMismatch { expected: 1, actual: 0 });
        }
        if let Some(expected) = self.length {
            if expected != len {
                return Err(LdtError::LengthMismatch { expected, actual: len });
            }
        }
        let errors =
            predicted.iter().zip(measured).filter(|(p, m)| (*m - *p).abs() > self.config.error_threshold).count()
                as u64;
        Ok(self.update_counts(errors, len))
    }

    /// Update from a precomputed count of out-of-threshold samples.
    pub fn update_counts(&self, errors: u64, len: usize) -> (DetectorSignal, LddmState) {
        let mut next = self.clone();
        next.length = Some(len);
        next.error_count += errors;
        next.sample_count += len as u64;
        next.experiments_seen += 1;

        let (p, s) = next.rate();
        if p + s < next.p_min + next.s_min {
            next.p_min = p;
            next.s_min = s;
            next.register_samples = match next.config.denominator {
                LddmDenominator::SinceReset => next.sample_count,
                LddmDenominator::Global => next.experiments_seen * len as u64,
            };
        }
        let floor = if next.config.s_floor { 1.0 / next.register_samples as f64 } else { 0.0 };
        let signal = lddm_signal(p, s, next.p_min, next.s_min + floor);
        if signal == DetectorSignal::Drift {
            return (signal, next.reset());
        }
        (signal, next)
    }

    pub fn error_rate(&self) -> Option<(f64, f64)> {
        (self.sample_count > 0).then(|| self.rate())
    }
}

/// One of the three interchangeable detectors with its state.
#[derive(Debug, Clone, PartialEq)]
pub enum Detector {
    Window(WindowConfig),
    Threshold(ThresholdConfig),
    Lddm(LddmState),
}

impl Detector {
    /// Signal for experiment `index` (1-based) and the detector's next state.
    pub fn step(&self, index: usize, predicted: &[f64], measured: &[f64]) -> Result<(DetectorSignal, Detector)> {
        match self {
            Detector::Window(cfg) => Ok((window_detect(index, cfg), self.clone())),
            Detector::Threshold(cfg) => Ok((threshold_detect(predicted, measured, cfg)?, self.clone())),
            Detector::Lddm(state) => {
                let (signal, next) = state.update(predicted, measured)?;
                Ok((signal, Detector::Lddm(next)))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_error_cases() {
        assert_eq!(max_error(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(max_error(&[1.0, 0.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 2.0);
        assert!(max_error(&[1.0], &[1.0, 2.0]).is_err());
        assert!(max_error(&[], &[]).is_err());
    }

    #[test]
    fn threshold_cases() {
        let cfg = ThresholdConfig::new(4.0, 2.0).unwrap();
        assert_eq!(cfg.signal(5.0), DetectorSignal::Drift);
        assert_eq!(cfg.signal(3.0), DetectorSignal::Warning);
        assert_eq!(cfg.signal(1.0), DetectorSignal::Ok);
        assert_eq!(threshold_detect(&[0.0, 5.0], &[0.0, 0.0], &cfg).unwrap(), DetectorSignal::Drift);
        assert!(ThresholdConfig::new(1.0, 2.0).is_err());
        assert!(ThresholdConfig::new(1.0, 0.0).is_err());
        let never = ThresholdConfig::new(f64::INFINITY, 1.0).unwrap();
        assert_eq!(never.signal(1e300), DetectorSignal::Warning);
    }

    #[test]
    fn window_cases() {
        let w5 = WindowConfig { length: 5 };
        assert_eq!(window_detect(5, &w5), DetectorSignal::Drift);
        assert_eq!(window_detect(7, &w5), DetectorSignal::Ok);
        let w1 = WindowConfig { length: 1 };
        assert!((1..=50).all(|i| window_detect(i, &w1) == DetectorSignal::Drift));
    }

    #[test]
    fn signal_values() {
        for s in [DetectorSignal::Drift, DetectorSignal::Warning, DetectorSignal::Ok] {
            assert_eq!(DetectorSignal::from_value(s.value()), Some(s));
        }
        assert_eq!(serde_json::to_string(&DetectorSignal::Ok).unwrap(), "-1");
    }

    #[test]
    fn lddm_first_clean_call() {
        let s = LddmState::new(LddmConfig::new(1.0));
        let (sig, next) = s.update(&[0.0; 100], &[0.5; 100]).unwrap();
        assert_eq!(sig, DetectorSignal::Ok);
        assert_eq!((next.p_min, next.s_min), (0.0, 0.0));
        assert_eq!(next.error_rate(), Some((0.0, 0.0)));
        // The input state is untouched.
        assert_eq!(s.sample_count, 0);
    }

    #[test]
    fn lddm_standard_deviation() {
        let s = LddmState::new(LddmConfig::new(1.0));
        let (_, next) = s.update_counts(50, 100);
        let (p, sd) = next.error_rate().unwrap();
        assert_eq!(p, 0.5);
        assert!((sd - 0.05).abs() < 1e-15);
    }

    #[test]
    fn lddm_comparison() {
        assert_eq!(lddm_signal(0.12, 0.02, 0.10, 0.01), DetectorSignal::Drift);
        assert_eq!(lddm_signal(0.115, 0.01, 0.10, 0.01), DetectorSignal::Warning);
        assert_eq!(lddm_signal(0.10, 0.01, 0.10, 0.01), DetectorSignal::Ok);
    }

    #[test]
    fn lddm_length_must_stay_fixed() {
        let s = LddmState::new(LddmConfig::new(1.0));
        let (_, s) = s.update(&[0.0; 10], &[0.0; 10]).unwrap();
        assert!(s.update(&[0.0; 11], &[0.0; 11]).is_err());
    }

    #[test]
    fn lddm_reset_after_drift() {
        let cfg = LddmConfig::new(1.0);
        let s = LddmState::new(cfg);
        let (_, s) = s.update_counts(0, 100);
        let (_, s) = s.update_counts(2, 100);
        let (sig, s) = s.update_counts(60, 100);
        assert_eq!(sig, DetectorSignal::Drift);
        assert_eq!((s.error_count, s.sample_count), (0, 0));
        assert!(s.p_min.is_infinite() && s.s_min.is_infinite());
        // Behaves like a fresh detector apart from the lifetime counter.
        let fresh = LddmState::new(cfg);
        let (a, sa) = s.update_counts(7, 100);
        let (b, sb) = fresh.update_counts(7, 100);
        assert_eq!(a, b);
        assert_eq!((sa.p_min, sa.s_min, sa.error_count), (sb.p_min, sb.s_min, sb.error_count));
    }

    #[test]
    fn lddm_global_denominator_uses_lifetime_count() {
        let cfg = LddmConfig { denominator: LddmDenominator::Global, ..LddmConfig::new(1.0) };
        let mut s = LddmState::new(cfg);
        s.experiments_seen = 9;
        let (_, s) = s.update_counts(10, 100);
        let (p, sd) = s.error_rate().unwrap();
        assert_eq!(p, 0.1);
        assert!((sd - (0.09f64 / 1000.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn detector_enum_dispatch() {
        let d = Detector::Threshold(ThresholdConfig::new(4.0, 2.0).unwrap());
        let (sig, d2) = d.step(1, &[0.0], &[3.0]).unwrap();
        assert_eq!(sig, DetectorSignal::Warning);
        assert_eq!(d, d2);
        let w = Detector::Window(WindowConfig { length: 2 });
        assert_eq!(w.step(2, &[0.0], &[0.0]).unwrap().0, DetectorSignal::Drift);
        let l = Detector::Lddm(LddmState::new(LddmConfig::new(1.0)));
        let (_, l2) = l.step(1, &[0.0; 4], &[0.0, 0.0, 2.0, 0.0]).unwrap();
        match l2 {
            Detector::Lddm(s) => assert_eq!(s.error_count, 1),
            _ => unreachable!(),
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn threshold_signal_nonincreasing_in_drift_threshold(
                err in 0.0f64..10.0, w in 0.01f64..5.0, c1 in 0.0f64..10.0, dc in 0.0f64..10.0,
            ) {
                let lo = ThresholdConfig { drift: w + c1, warning: w };
                let hi = ThresholdConfig { drift: w + c1 + dc, warning: w };
                prop_assert!(hi.signal(err).value() <= lo.signal(err).value());
                prop_assert_eq!(lo.signal(err), lo.signal(err));
            }

            #[test]
            fn lddm_scale_invariant(
                residuals in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 20), 1..8),
                theta in 0.1f64..2.0,
                k in -6i32..6,
            ) {
                let c = 2f64.powi(k);
                let mut a = LddmState::new(LddmConfig::new(theta));
                let mut b = LddmState::new(LddmConfig::new(theta * c));
                let zeros = vec![0.0; 20];
                for r in &residuals {
                    let scaled: Vec<f64> = r.iter().map(|v| v * c).collect();
                    let (sa, na) = a.update(&zeros, r).unwrap();
                    let (sb, nb) = b.update(&zeros, &scaled).unwrap();
                    prop_assert_eq!(sa, sb);
                    a = na;
                    b = nb;
                }
            }

            #[test]
            fn lddm_registers_nonincreasing_between_resets(
                counts in proptest::collection::vec(0u64..40, 1..30),
            ) {
                let mut s = LddmState::new(LddmConfig::new(1.0));
                let mut prev = f64::INFINITY;
                for c in counts {
                    let (sig, next) = s.update_counts(c, 100);
                    if sig == DetectorSignal::Drift {
                        prev = f64::INFINITY;
                    } else {
                        prop_assert!(next.p_min + next.s_min <= prev);
                        prev = next.p_min + next.s_min;
                    }
                    prop_assert!(next.error_count <= next.sample_count);
                    s = next;
                }
            }
        }
    }
}
