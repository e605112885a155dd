//! Range-only beacon localization with a drift-blind particle filter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dist::{ParticleCloudPrediction, PredictionRecord, PredictiveDistribution};
use crate::error::{Error, Result};

/// Which cloud is emitted alongside the true position at each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmittedCloud {
    /// Propagated particles before the step's measurements are applied.
    Prior,
    /// Weighted particles after the measurement update, before resampling.
    Posterior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotSimConfig {
    pub n_particles: usize,
    pub n_steps: usize,
    pub drift_multiplier: f64,
    /// Drift per step at multiplier 1.
    pub drift: [f64; 2],
    pub beacon_positions: Vec<[f64; 2]>,
    pub range_noise_sd: f64,
    pub process_noise_sd: f64,
    pub start: [f64; 2],
    pub initial_sd: f64,
    pub emit: EmittedCloud,
    pub seed: u64,
}

impl Default for RobotSimConfig {
    fn default() -> Self {
        RobotSimConfig {
            n_particles: 500,
            n_steps: 500,
            drift_multiplier: 1.0,
            drift: [0.1, 0.05],
            beacon_positions: vec![[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0]],
            range_noise_sd: 0.3,
            process_noise_sd: 0.3,
            start: [5.0, 5.0],
            initial_sd: 0.5,
            emit: EmittedCloud::Prior,
            seed: 0,
        }
    }
}

impl RobotSimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles < 2 {
            return Err(Error::invalid("need at least 2 particles"));
        }
        if !(self.drift_multiplier >= 0.0) {
            return Err(Error::invalid("drift_multiplier must be non-negative"));
        }
        if !(self.range_noise_sd > 0.0 && self.process_noise_sd > 0.0 && self.initial_sd > 0.0) {
            return Err(Error::invalid("noise scales must be positive"));
        }
        let b = &self.beacon_positions;
        if b.len() < 3 {
            return Err(Error::invalid("range-only localization needs at least 3 beacons"));
        }
        let collinear = b.iter().skip(2).all(|c| {
            let cross = (b[1][0] - b[0][0]) * (c[1] - b[0][1]) - (b[1][1] - b[0][1]) * (c[0] - b[0][0]);
            cross.abs() < 1e-12
        });
        if collinear {
            return Err(Error::invalid("beacons are collinear"));
        }
        Ok(())
    }
}

/// Stream ids keep truth noise and filter noise on separate ChaCha streams
/// so runs that differ only in drift share their random numbers.
const TRUTH_STREAM: u64 = 0;
const FILTER_STREAM: u64 = 1;

pub(crate) fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gauss<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn range(p: [f64; 2], b: [f64; 2]) -> f64 {
    ((p[0] - b[0]).powi(2) + (p[1] - b[1]).powi(2)).sqrt()
}

/// Output of one simulation: records plus the filter means for diagnostics.
#[derive(Debug, Clone)]
pub struct RobotRun {
    pub records: Vec<PredictionRecord>,
    pub truth: Vec<[f64; 2]>,
    /// Posterior weighted mean per step.
    pub filter_mean: Vec<[f64; 2]>,
}

pub fn run_robot_sim(config: &RobotSimConfig) -> Result<RobotRun> {
    config.validate()?;
    let m = config.n_particles;
    let mut truth_rng = seeded(config.seed, TRUTH_STREAM);
    let mut filt_rng = seeded(config.seed, FILTER_STREAM);
    let q = config.process_noise_sd;
    let r = config.range_noise_sd;
    let drift = [config.drift[0] * config.drift_multiplier, config.drift[1] * config.drift_multiplier];

    let mut x = [
        config.start[0] + config.initial_sd * gauss(&mut truth_rng),
        config.start[1] + config.initial_sd * gauss(&mut truth_rng),
    ];
    let mut particles: Vec<[f64; 2]> = (0..m)
        .map(|_| {
            [
                config.start[0] + config.initial_sd * gauss(&mut filt_rng),
                config.start[1] + config.initial_sd * gauss(&mut filt_rng),
            ]
        })
        .collect();
    let mut weights = vec![1.0 / m as f64; m];
    let mut log_w = vec![0.0; m];

    let mut out = RobotRun {
        records: Vec::with_capacity(config.n_steps),
        truth: Vec::with_capacity(config.n_steps),
        filter_mean: Vec::with_capacity(config.n_steps),
    };
    for step in 0..config.n_steps {
        x = [x[0] + drift[0] + q * gauss(&mut truth_rng), x[1] + drift[1] + q * gauss(&mut truth_rng)];
        let ranges: Vec<f64> =
            config.beacon_positions.iter().map(|&b| range(x, b) + r * gauss(&mut truth_rng)).collect();

        for p in particles.iter_mut() {
            p[0] += q * gauss(&mut filt_rng);
            p[1] += q * gauss(&mut filt_rng);
        }
        if config.emit == EmittedCloud::Prior {
            out.records.push(cloud_record(&weights, &particles, x)?);
        }

        for ((lw, &w), p) in log_w.iter_mut().zip(&weights).zip(&particles) {
            let ll: f64 = config
                .beacon_positions
                .iter()
                .zip(&ranges)
                .map(|(&b, &z)| {
                    let e = z - range(*p, b);
                    -0.5 * e * e / (r * r)
                })
                .sum();
            *lw = w.ln() + ll;
        }
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::ParticleDepletion { step });
        }
        weights.iter_mut().zip(&log_w).for_each(|(w, &lw)| *w = (lw - max).exp());
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::ParticleDepletion { step });
        }
        weights.iter_mut().for_each(|w| *w /= total);

        if config.emit == EmittedCloud::Posterior {
            out.records.push(cloud_record(&weights, &particles, x)?);
        }
        let mean =
            particles.iter().zip(&weights).fold([0.0, 0.0], |acc, (p, &w)| [acc[0] + w * p[0], acc[1] + w * p[1]]);
        out.truth.push(x);
        out.filter_mean.push(mean);

        let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        if ess < m as f64 / 2.0 {
            particles = systematic_resample(&weights, &particles, filt_rng.random::<f64>());
            weights.iter_mut().for_each(|w| *w = 1.0 / m as f64);
        }
    }
    Ok(out)
}

fn cloud_record(weights: &[f64], particles: &[[f64; 2]], truth: [f64; 2]) -> Result<PredictionRecord> {
    let flat: Vec<f64> = particles.iter().flat_map(|p| p.iter().copied()).collect();
    let cloud = ParticleCloudPrediction::from_flat(weights.to_vec(), flat, 2)?;
    PredictionRecord::new(PredictiveDistribution::Particles(cloud), truth.to_vec(), None)
}

/// One uniform offset `u ∈ [0,1)`, `M` evenly spaced pointers.
fn systematic_resample(weights: &[f64], particles: &[[f64; 2]], u: f64) -> Vec<[f64; 2]> {
    let m = weights.len();
    let mut out = Vec::with_capacity(m);
    let mut cum = weights[0];
    let mut j = 0;
    for i in 0..m {
        let target = (i as f64 + u) / m as f64;
        while cum < target && j + 1 < m {
            j += 1;
            cum += weights[j];
        }
        out.push(particles[j]);
    }
    out
}
