//! Sequential testing with likelihood-ratio e-values.
//!
//! Each step turns a coverage indicator `k ∈ {0,1}` at level λ into
//! `e = (p_alt/λ)^k ((1−p_alt)/(1−λ))^{1−k}`, whose null mean is exactly 1.
//! The running product is kept as a logarithm and an alarm is raised the
//! first time it exceeds `1/α`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{
    centered_interval, GaussianPrediction, ParticleCloudPrediction, PredictionRecord, PredictiveDistribution,
};
use crate::error::{Error, Result};
use crate::metric::{covered_at, halfplane_interval_indicator, sample_direction};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EValueConfig {
    pub level: f64,
    pub p_alt: f64,
    pub alpha: f64,
}

impl EValueConfig {
    pub fn new(level: f64, p_alt: f64, alpha: f64) -> Result<Self> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::invalid(format!("level {level} outside (0,1)")));
        }
        if !(p_alt > 0.0 && p_alt < level) {
            return Err(Error::invalid(format!("p_alt {p_alt} must lie in (0, {level})")));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::invalid(format!("alpha {alpha} outside (0,1)")));
        }
        Ok(EValueConfig { level, p_alt, alpha })
    }

    /// `p_alt = λ − 0.1`.
    pub fn with_default_alt(level: f64, alpha: f64) -> Result<Self> {
        Self::new(level, level - 0.1, alpha)
    }

    pub fn threshold(&self) -> f64 {
        1.0 / self.alpha
    }

    pub fn log_threshold(&self) -> f64 {
        -self.alpha.ln()
    }

    fn log_factor(&self, covered: bool) -> f64 {
        if covered {
            (self.p_alt / self.level).ln()
        } else {
            ((1.0 - self.p_alt) / (1.0 - self.level)).ln()
        }
    }
}

/// `(p_alt/λ)^k ((1−p_alt)/(1−λ))^{1−k}`.
pub fn lr_evalue(covered: bool, config: &EValueConfig) -> f64 {
    config.log_factor(covered).exp()
}

/// Arithmetic mean of e-values.
pub fn average_evalues(es: &[f64]) -> Result<f64> {
    if es.is_empty() {
        return Err(Error::Empty("e-value list"));
    }
    if let Some(e) = es.iter().find(|e| !(**e >= 0.0)) {
        return Err(Error::invalid(format!("e-value {e} is negative")));
    }
    Ok(es.iter().sum::<f64>() / es.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleState {
    /// `ln E_t`.
    pub log_e: f64,
    pub t: u64,
    pub alarmed: bool,
    pub first_crossing: Option<u64>,
    /// `max_{s ≤ t} ln E_s`.
    pub peak_log_e: f64,
}

impl Default for MartingaleState {
    fn default() -> Self {
        Self::new()
    }
}

impl MartingaleState {
    pub fn new() -> Self {
        MartingaleState { log_e: 0.0, t: 0, alarmed: false, first_crossing: None, peak_log_e: 0.0 }
    }

    pub fn e_value(&self) -> f64 {
        self.log_e.exp()
    }

    /// Applies one indicator. Keeps running after an alarm.
    pub fn step(&self, covered: bool, config: &EValueConfig) -> MartingaleState {
        let log_e = self.log_e + config.log_factor(covered);
        let t = self.t + 1;
        let crossed = !self.alarmed && log_e > config.log_threshold();
        MartingaleState {
            log_e,
            t,
            alarmed: self.alarmed || crossed,
            first_crossing: if crossed { Some(t) } else { self.first_crossing },
            peak_log_e: self.peak_log_e.max(log_e),
        }
    }
}

/// One step of the univariate Gaussian monitor: `k = 1[lo ≤ y ≤ hi]` for the
/// centered level-λ interval.
pub fn monitor_step_gaussian(
    state: &MartingaleState,
    pred: &GaussianPrediction,
    y: f64,
    config: &EValueConfig,
) -> Result<MartingaleState> {
    if !y.is_finite() {
        return Err(Error::invalid(format!("non-finite outcome {y}")));
    }
    let (lo, hi) = centered_interval(pred, config.level)?;
    Ok(state.step(lo <= y && y <= hi, config))
}

/// One step of the half-plane monitor with a fresh direction from `rng`.
pub fn monitor_step_halfplane<R: Rng + ?Sized>(
    state: &MartingaleState,
    pred: &ParticleCloudPrediction,
    y: &[f64],
    config: &EValueConfig,
    rng: &mut R,
) -> Result<MartingaleState> {
    if y.len() != pred.dim() {
        return Err(Error::DimensionMismatch { expected: pred.dim(), got: y.len() });
    }
    let d = sample_direction(pred.dim(), rng)?;
    let covered = halfplane_interval_indicator(pred, &d, y, config.level)?;
    Ok(state.step(covered, config))
}

/// Dispatches on the record's model: particle clouds use the half-plane
/// step, everything else its own level-λ set.
pub fn monitor_step_record<R: Rng + ?Sized>(
    state: &MartingaleState,
    record: &PredictionRecord,
    config: &EValueConfig,
    rng: &mut R,
) -> Result<MartingaleState> {
    match &record.prediction {
        PredictiveDistribution::Gaussian(g) => monitor_step_gaussian(state, g, record.outcome[0], config),
        PredictiveDistribution::Particles(c) => monitor_step_halfplane(state, c, &record.outcome, config, rng),
        _ => Ok(state.step(covered_at(record, config.level)?, config)),
    }
}
