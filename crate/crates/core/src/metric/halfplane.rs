//! Half-plane reduction of particle clouds to Bernoulli indicators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{CoverageCurve, LevelGrid};
use crate::dist::{
    dot, project_particles, weighted_quantile_sorted, ParticleCloudPrediction, PredictionRecord,
    PredictiveDistribution, UNIT_NORM_TOL,
};
use crate::error::{Error, Result};

/// Directions per dimension when no explicit probe count is given.
pub const DEFAULT_PROBES_PER_DIM: usize = 10;

/// A direction `d` and cut `b` defining `h(y) = 1[<y, d> > b]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfPlaneProbe {
    pub direction: Vec<f64>,
    pub threshold: f64,
    /// Reference-cloud mass above the cut.
    pub null_mean: f64,
    /// Grid level the cut was placed at.
    pub level: f64,
}

impl HalfPlaneProbe {
    pub fn new(direction: Vec<f64>, threshold: f64, null_mean: f64, level: f64) -> Result<Self> {
        let norm = dot(&direction, &direction).sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::invalid(format!("probe direction has norm {norm}")));
        }
        if !(0.0..=1.0).contains(&null_mean) {
            return Err(Error::invalid(format!("null mean {null_mean} outside [0,1]")));
        }
        Ok(HalfPlaneProbe { direction, threshold, null_mean, level })
    }

    pub fn indicator(&self, y: &[f64]) -> Result<bool> {
        if y.len() != self.direction.len() {
            return Err(Error::DimensionMismatch { expected: self.direction.len(), got: y.len() });
        }
        Ok(dot(y, &self.direction) > self.threshold)
    }
}

/// One direction uniform on the unit sphere. For `p = 2` the angle is drawn
/// from `U(0, π)`; for `p = 1` the direction is `+1`.
pub fn sample_direction<R: Rng + ?Sized>(p: usize, rng: &mut R) -> Result<Vec<f64>> {
    match p {
        0 => Err(Error::invalid("dimension must be positive")),
        1 => Ok(vec![1.0]),
        2 => {
            let theta = rng.random::<f64>() * std::f64::consts::PI;
            Ok(vec![theta.cos(), theta.sin()])
        }
        _ => loop {
            let v: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
            let norm = dot(&v, &v).sqrt();
            if norm > 1e-12 {
                return Ok(v.into_iter().map(|x| x / norm).collect());
            }
        },
    }
}

pub fn sample_directions<R: Rng + ?Sized>(p: usize, count: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    (0..count).map(|_| sample_direction(p, rng)).collect()
}

fn sorted_projection(cloud: &ParticleCloudPrediction, d: &[f64]) -> Result<Vec<(f64, f64)>> {
    let mut proj = project_particles(cloud, d)?;
    proj.sort_by(|a, b| a.1.total_cmp(&b.1));
    Ok(proj)
}

/// `count` probes with directions drawn from `rng_seed`. Probe `ℓ` is cut at
/// grid level `λ_{ℓ mod K}`: the threshold is the `(1 − λ)` weighted quantile
/// of the reference cloud projected on its direction.
pub fn sample_probes(
    pred_dim: usize,
    count: usize,
    grid: &LevelGrid,
    rng_seed: u64,
    reference: &ParticleCloudPrediction,
) -> Result<Vec<HalfPlaneProbe>> {
    if count == 0 {
        return Err(Error::invalid("probe count must be at least 1"));
    }
    if reference.dim() != pred_dim {
        return Err(Error::DimensionMismatch { expected: pred_dim, got: reference.dim() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let levels = grid.levels();
    (0..count)
        .map(|l| {
            let d = sample_direction(pred_dim, &mut rng)?;
            let proj = sorted_projection(reference, &d)?;
            let level = levels[l % levels.len()];
            let b = weighted_quantile_sorted(&proj, 1.0 - level)?;
            let above: f64 = proj.iter().filter(|p| p.1 > b).map(|p| p.0).sum();
            HalfPlaneProbe::new(d, b, above.clamp(0.0, 1.0), level)
        })
        .collect()
}

/// `Σ_j w_j h(ŷ_j) − h(y)`.
pub fn halfplane_delta(probe: &HalfPlaneProbe, pred: &ParticleCloudPrediction, y: &[f64]) -> Result<f64> {
    let proj = project_particles(pred, &probe.direction)?;
    let mass: f64 = proj.iter().filter(|p| p.1 > probe.threshold).map(|p| p.0).sum();
    Ok(mass - f64::from(u8::from(probe.indicator(y)?)))
}

/// `lo ≤ <y, d> ≤ hi` with `lo, hi` the weighted `(1 ∓ λ)/2` quantiles of the
/// cloud projected on `d`.
pub fn halfplane_interval_indicator(
    pred: &ParticleCloudPrediction,
    direction: &[f64],
    y: &[f64],
    level: f64,
) -> Result<bool> {
    let proj = sorted_projection(pred, direction)?;
    let z = dot(y, direction);
    let lo = weighted_quantile_sorted(&proj, (1.0 - level) / 2.0)?;
    let hi = weighted_quantile_sorted(&proj, (1.0 + level) / 2.0)?;
    Ok(lo <= z && z <= hi)
}

/// One coverage curve per frozen direction: record `i` counts as covered at
/// `λ` when its outcome's projection falls inside the centered weighted
/// interval of its own cloud.
pub fn halfplane_coverage(
    records: &[PredictionRecord],
    grid: &LevelGrid,
    directions: &[Vec<f64>],
) -> Result<Vec<CoverageCurve>> {
    if records.is_empty() {
        return Err(Error::Empty("record list"));
    }
    if directions.is_empty() {
        return Err(Error::Empty("direction list"));
    }
    let levels = grid.levels();
    let mut counts = vec![vec![0u64; levels.len()]; directions.len()];
    for r in records {
        let PredictiveDistribution::Particles(cloud) = &r.prediction else {
            return Err(Error::UnsupportedMetric(format!(
                "half-plane metric needs particle clouds, got {}",
                r.prediction.kind()
            )));
        };
        for (d, row) in directions.iter().zip(counts.iter_mut()) {
            let proj = sorted_projection(cloud, d)?;
            let z = dot(&r.outcome, d);
            for (c, &l) in row.iter_mut().zip(levels) {
                let lo = weighted_quantile_sorted(&proj, (1.0 - l) / 2.0)?;
                let hi = weighted_quantile_sorted(&proj, (1.0 + l) / 2.0)?;
                *c += u64::from(lo <= z && z <= hi);
            }
        }
    }
    counts.into_iter().map(|c| CoverageCurve::new(grid.clone(), c, records.len() as u64)).collect()
}
