//! The metric slot: turns a batch of [`PredictionRecord`]s into test-ready
//! statistics.
//!
//! For scalar models the coverage count at level λ is computed through the
//! folded PIT, `v = |2u − 1| ≤ λ`, which makes [`coverage_counts`] and
//! [`ecdf_eval`]`(`[`fold`]`(`[`pit`]`(..)))` agree bit for bit.

mod halfplane;

use serde::{Deserialize, Serialize};

use crate::dist::special::{chi2_cdf, chi2_quantile};
use crate::dist::{centered_interval, mahalanobis_sq, ModelKind, PredictionRecord, PredictiveDistribution};
use crate::error::{Error, Result};

pub use halfplane::{
    halfplane_coverage, halfplane_delta, halfplane_interval_indicator, sample_direction, sample_directions,
    sample_probes, HalfPlaneProbe, DEFAULT_PROBES_PER_DIM,
};

/// Strictly increasing coverage levels in `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LevelGrid {
    levels: Vec<f64>,
}

impl LevelGrid {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Empty("level grid"));
        }
        for (i, &l) in levels.iter().enumerate() {
            if !(l > 0.0 && l < 1.0) {
                return Err(Error::invalid(format!("level {l} outside (0,1)")));
            }
            if i > 0 && l <= levels[i - 1] {
                return Err(Error::invalid("levels must be strictly increasing"));
            }
        }
        Ok(LevelGrid { levels })
    }

    /// `{0.05, 0.15, …, 0.95}`.
    pub fn default_grid() -> Self {
        LevelGrid { levels: (0..10).map(|k| (2 * k + 1) as f64 / 20.0).collect() }
    }

    /// `{1/(k+1), …, k/(k+1)}`.
    pub fn uniform(k: usize) -> Result<Self> {
        Self::new((1..=k).map(|j| j as f64 / (k + 1) as f64).collect())
    }

    /// Parses a comma-separated list such as `0.5,0.8,0.9`.
    pub fn parse_list(s: &str) -> Result<Self> {
        let levels = s
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| Error::Config(format!("bad level `{t}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(levels)
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

impl Default for LevelGrid {
    fn default() -> Self {
        Self::default_grid()
    }
}

impl TryFrom<Vec<f64>> for LevelGrid {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        LevelGrid::new(v)
    }
}

impl From<LevelGrid> for Vec<f64> {
    fn from(g: LevelGrid) -> Self {
        g.levels
    }
}

/// PIT values `u_i`, or folded values `v_i = |2u_i − 1|` when `folded`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitSample {
    values: Vec<f64>,
    folded: bool,
}

impl PitSample {
    pub fn new(values: Vec<f64>, folded: bool) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("PIT value {v} outside [0,1]")));
        }
        Ok(PitSample { values, folded })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_folded(&self) -> bool {
        self.folded
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Values sorted ascending.
    pub fn sorted(&self) -> Vec<f64> {
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        v
    }
}

/// Coverage counts over a level grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageCurve {
    levels: LevelGrid,
    counts: Vec<u64>,
    n: u64,
}

impl CoverageCurve {
    /// Checks `0 ≤ count_k ≤ n` and that counts never decrease with the level.
    pub fn new(levels: LevelGrid, counts: Vec<u64>, n: u64) -> Result<Self> {
        if counts.len() != levels.len() {
            return Err(Error::DimensionMismatch { expected: levels.len(), got: counts.len() });
        }
        if counts.iter().any(|&c| c > n) {
            return Err(Error::invalid("coverage count exceeds sample size"));
        }
        if counts.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("coverage counts must be non-decreasing in the level (nested sets)"));
        }
        Ok(CoverageCurve { levels, counts, n })
    }

    pub fn levels(&self) -> &LevelGrid {
        &self.levels
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    /// `ĉ(λ_k) = count_k / N`.
    pub fn fractions(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / self.n as f64).collect()
    }
}

#[inline]
pub(crate) fn fold_value(u: f64) -> f64 {
    (2.0 * u - 1.0).abs()
}

/// Compatibility class used to reject mixed batches.
fn coverage_class(kind: ModelKind) -> u8 {
    match kind {
        ModelKind::Gaussian | ModelKind::Parametric => 0,
        ModelKind::MvGaussian => 1,
        ModelKind::SetProvider => 2,
        ModelKind::Particles => 3,
    }
}

fn check_homogeneous(records: &[PredictionRecord]) -> Result<ModelKind> {
    let first = records.first().ok_or(Error::Empty("record list"))?;
    let kind = first.prediction.kind();
    let dim = first.prediction.dim();
    for r in records {
        let k = r.prediction.kind();
        if coverage_class(k) != coverage_class(kind) {
            return Err(Error::Unsupported(format!("mixed model families: {kind} and {k}")));
        }
        if r.prediction.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: r.prediction.dim() });
        }
    }
    Ok(kind)
}

/// Number of outcomes inside the level-λ_k prediction set, per level.
pub fn coverage_counts(records: &[PredictionRecord], grid: &LevelGrid) -> Result<CoverageCurve> {
    let kind = check_homogeneous(records)?;
    let levels = grid.levels();
    let mut counts = vec![0u64; levels.len()];
    match kind {
        ModelKind::Gaussian | ModelKind::Parametric => {
            for r in records {
                let v = fold_value(scalar_pit(r)?);
                for (c, &l) in counts.iter_mut().zip(levels) {
                    *c += u64::from(v <= l);
                }
            }
        }
        ModelKind::MvGaussian => {
            let d = records[0].prediction.dim();
            let radii = levels.iter().map(|&l| chi2_quantile(d, l)).collect::<Result<Vec<_>>>()?;
            for r in records {
                let PredictiveDistribution::MvGaussian(g) = &r.prediction else { unreachable!() };
                let d2 = mahalanobis_sq(g, &r.outcome)?;
                for (c, &rad) in counts.iter_mut().zip(&radii) {
                    *c += u64::from(d2 <= rad);
                }
            }
        }
        ModelKind::SetProvider => {
            for r in records {
                let PredictiveDistribution::SetProvider(s) = &r.prediction else { unreachable!() };
                for (c, &l) in counts.iter_mut().zip(levels) {
                    *c += u64::from(s.contains(l, &r.outcome)?);
                }
            }
        }
        ModelKind::Particles => {
            return Err(Error::UnsupportedMetric(
                "particle clouds have no centered sets; use the half-plane metric".into(),
            ))
        }
    }
    CoverageCurve::new(grid.clone(), counts, records.len() as u64)
}

/// Coverage indicator of a single record at one level, using the same
/// geometry as [`coverage_counts`] except that scalar models are tested
/// against the explicit centered interval (weak inequalities).
pub fn covered_at(record: &PredictionRecord, level: f64) -> Result<bool> {
    let y = &record.outcome;
    match &record.prediction {
        PredictiveDistribution::Gaussian(g) => {
            let (lo, hi) = centered_interval(g, level)?;
            Ok(lo <= y[0] && y[0] <= hi)
        }
        PredictiveDistribution::Parametric(p) => {
            let (lo, hi) = centered_interval(p, level)?;
            Ok(lo <= y[0] && y[0] <= hi)
        }
        PredictiveDistribution::MvGaussian(g) => crate::dist::ellipsoid_contains(g, y, level),
        PredictiveDistribution::SetProvider(s) => s.contains(level, y),
        PredictiveDistribution::Particles(_) => {
            Err(Error::UnsupportedMetric("particle clouds need a direction; use the half-plane metric".into()))
        }
    }
}

fn scalar_pit(r: &PredictionRecord) -> Result<f64> {
    let s = r
        .prediction
        .as_scalar()
        .ok_or_else(|| Error::UnsupportedMetric(format!("no scalar CDF for {}", r.prediction.kind())))?;
    let u = s.cdf(r.outcome[0]);
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::InvalidDistribution(format!("cdf returned {u}")));
    }
    Ok(u)
}

fn record_pit(r: &PredictionRecord) -> Result<f64> {
    match &r.prediction {
        PredictiveDistribution::Gaussian(_) | PredictiveDistribution::Parametric(_) => scalar_pit(r),
        PredictiveDistribution::MvGaussian(g) => Ok(chi2_cdf(g.dim(), mahalanobis_sq(g, &r.outcome)?)),
        PredictiveDistribution::Particles(_) => {
            Err(Error::UnsupportedMetric("the PIT is undefined for particle clouds".into()))
        }
        PredictiveDistribution::SetProvider(_) => {
            Err(Error::UnsupportedMetric("the PIT needs a CDF; set providers only expose membership".into()))
        }
    }
}

/// `u_i = cdf(p̂_i, y_i)`; multivariate Gaussians go through `cdf(χ²_d, D_i²)`.
pub fn pit(records: &[PredictionRecord]) -> Result<PitSample> {
    if records.is_empty() {
        return Err(Error::Empty("record list"));
    }
    let values = records.iter().map(record_pit).collect::<Result<Vec<_>>>()?;
    PitSample::new(values, false)
}

/// `v_i = |2u_i − 1|`.
pub fn fold(sample: &PitSample) -> Result<PitSample> {
    if sample.folded {
        return Err(Error::invalid("sample is already folded"));
    }
    Ok(PitSample { values: sample.values.iter().map(|&u| fold_value(u)).collect(), folded: true })
}

/// Fraction of values `≤ t`.
pub fn ecdf_eval(sample: &PitSample, t: f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::Empty("PIT sample"));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("ECDF argument {t} outside [0,1]")));
    }
    let count = sample.values.iter().filter(|&&v| v <= t).count();
    Ok(count as f64 / sample.len() as f64)
}

/// ECDF evaluated at every grid level.
pub fn ecdf_curve(sample: &PitSample, grid: &LevelGrid) -> Result<Vec<f64>> {
    grid.levels().iter().map(|&t| ecdf_eval(sample, t)).collect()
}

/// Partition of records into bins of roughly equal size by predicted uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceBins {
    /// Upper edge of every bin but the last (uncertainty of its largest member).
    pub bin_edges: Vec<f64>,
    /// Bin index of each record, in record order.
    pub assignments: Vec<usize>,
    pub k_bins: usize,
}

impl VarianceBins {
    pub fn members(&self, bin: usize) -> Vec<usize> {
        self.assignments.iter().enumerate().filter(|(_, &b)| b == bin).map(|(i, _)| i).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k_bins];
        self.assignments.iter().for_each(|&b| s[b] += 1);
        s
    }
}

/// Scalar uncertainty used for binning: σ for Gaussians, the interquartile
/// width for other scalar families, `log det Σ` for multivariate Gaussians.
pub fn uncertainty(record: &PredictionRecord) -> Result<f64> {
    match &record.prediction {
        PredictiveDistribution::Gaussian(g) => Ok(g.sigma()),
        PredictiveDistribution::Parametric(p) => {
            let (lo, hi) = centered_interval(p, 0.5)?;
            Ok(hi - lo)
        }
        PredictiveDistribution::MvGaussian(g) => Ok(g.log_det()),
        other => Err(Error::UnsupportedMetric(format!("no scalar uncertainty for {} predictions", other.kind()))),
    }
}

/// Rank-based quantile bins: records sorted stably by `(uncertainty, index)`
/// and the `r`-th of `N` goes to bin `⌊r·k/N⌋`.
pub fn variance_bin(records: &[PredictionRecord], k_bins: usize) -> Result<VarianceBins> {
    if k_bins == 0 {
        return Err(Error::invalid("need at least one bin"));
    }
    let n = records.len();
    if k_bins > n {
        return Err(Error::invalid(format!("{k_bins} bins for {n} records")));
    }
    let u = records.iter().map(uncertainty).collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| u[a].total_cmp(&u[b]).then(a.cmp(&b)));
    let mut assignments = vec![0; n];
    let mut bin_edges = vec![f64::NEG_INFINITY; k_bins - 1];
    for (rank, &i) in order.iter().enumerate() {
        let b = rank * k_bins / n;
        assignments[i] = b;
        if b + 1 < k_bins {
            bin_edges[b] = u[i];
        }
    }
    Ok(VarianceBins { bin_edges, assignments, k_bins })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{GaussianPrediction, MvGaussianPrediction, PredictionRecord};
    use approx::assert_relative_eq;

    fn g(mu: f64, sigma: f64, y: f64) -> PredictionRecord {
        PredictionRecord::gaussian(mu, sigma, y).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert_eq!(LevelGrid::default_grid().len(), 10);
        assert_eq!(LevelGrid::default_grid().levels()[0], 0.05);
        assert_eq!(LevelGrid::default_grid().levels()[9], 0.95);
        assert!(LevelGrid::new(vec![0.5, 0.5]).is_err());
        assert!(LevelGrid::new(vec![0.0, 0.5]).is_err());
        assert!(LevelGrid::new(vec![]).is_err());
        assert_eq!(LevelGrid::parse_list("0.1, 0.5,0.9").unwrap().levels(), &[0.1, 0.5, 0.9]);
        assert!(LevelGrid::parse_list("0.1,x").is_err());
    }

    #[test]
    fn median_outcomes_are_always_covered() {
        let recs: Vec<_> = (0..10).map(|i| g(i as f64, 1.0 + i as f64, i as f64)).collect();
        let c = coverage_counts(&recs, &LevelGrid::default_grid()).unwrap();
        assert!(c.counts().iter().all(|&k| k == 10));
    }

    #[test]
    fn three_point_count_at_95() {
        let recs = vec![g(0.0, 1.0, 0.0), g(0.0, 1.0, 0.5), g(0.0, 1.0, 3.0)];
        let c = coverage_counts(&recs, &LevelGrid::new(vec![0.95]).unwrap()).unwrap();
        assert_eq!(c.counts(), &[2]);
    }

    #[test]
    fn coverage_errors() {
        assert!(matches!(coverage_counts(&[], &LevelGrid::default_grid()), Err(Error::Empty(_))));
        let mv = PredictionRecord::new(
            PredictiveDistribution::MvGaussian(
                MvGaussianPrediction::new(vec![0.0, 0.0], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            ),
            vec![0.0, 0.0],
            None,
        )
        .unwrap();
        let mixed = vec![g(0.0, 1.0, 0.0), mv];
        assert!(matches!(coverage_counts(&mixed, &LevelGrid::default_grid()), Err(Error::Unsupported(_))));
    }

    #[test]
    fn curve_rejects_non_monotone_counts() {
        let grid = LevelGrid::new(vec![0.3, 0.6]).unwrap();
        assert!(CoverageCurve::new(grid.clone(), vec![5, 4], 10).is_err());
        assert!(CoverageCurve::new(grid.clone(), vec![5, 11], 10).is_err());
        assert!(CoverageCurve::new(grid, vec![4, 5], 10).is_ok());
    }

    #[test]
    fn pit_examples() {
        let p = pit(&[g(2.0, 3.0, 2.0), g(0.0, 1.0, 1.6449)]).unwrap();
        assert_eq!(p.values()[0], 0.5);
        assert_relative_eq!(p.values()[1], 0.95, epsilon = 1e-4);
        let mv = PredictionRecord::new(
            PredictiveDistribution::MvGaussian(
                MvGaussianPrediction::new(vec![1.0, 1.0], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            ),
            vec![1.0 + (2.0 * std::f64::consts::LN_2).sqrt(), 1.0],
            None,
        )
        .unwrap();
        assert_relative_eq!(pit(&[mv]).unwrap().values()[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn pit_rejects_particles() {
        let cloud = crate::dist::ParticleCloudPrediction::new(vec![0.5, 0.5], vec![vec![0.0], vec![1.0]]).unwrap();
        let r = PredictionRecord::new(PredictiveDistribution::Particles(cloud), vec![0.5], None).unwrap();
        assert!(matches!(pit(&[r]), Err(Error::UnsupportedMetric(_))));
    }

    #[test]
    fn folding() {
        let s = PitSample::new(vec![0.5, 0.0, 1.0, 0.975], false).unwrap();
        let f = fold(&s).unwrap();
        assert!(f.is_folded());
        assert_eq!(f.values()[0], 0.0);
        assert_eq!(f.values()[1], 1.0);
        assert_eq!(f.values()[2], 1.0);
        assert_relative_eq!(f.values()[3], 0.95, epsilon = 1e-15);
        assert!(fold(&f).is_err());
    }

    #[test]
    fn ecdf_examples() {
        let s = PitSample::new(vec![0.1, 0.5, 0.9], true).unwrap();
        assert_eq!(ecdf_eval(&s, 1.0).unwrap(), 1.0);
        assert_relative_eq!(ecdf_eval(&s, 0.5).unwrap(), 2.0 / 3.0);
        assert!(ecdf_eval(&s, 1.5).is_err());
        assert!(ecdf_eval(&PitSample::new(vec![], true).unwrap(), 0.5).is_err());
    }

    #[test]
    fn coverage_equals_folded_ecdf() {
        let recs: Vec<_> =
            (0..50).map(|i| g((i as f64).sin(), 0.5 + (i % 7) as f64 * 0.3, (i as f64 * 1.7).cos() * 2.0)).collect();
        let grid = LevelGrid::default_grid();
        let cov = coverage_counts(&recs, &grid).unwrap().fractions();
        let ecdf = ecdf_curve(&fold(&pit(&recs).unwrap()).unwrap(), &grid).unwrap();
        assert_eq!(cov, ecdf);
    }

    #[test]
    fn variance_bins_equal_sizes() {
        let recs: Vec<_> = (0..366).map(|i| g(0.0, 1.0 + ((i * 37) % 366) as f64, 0.0)).collect();
        let b = variance_bin(&recs, 3).unwrap();
        assert_eq!(b.sizes(), vec![122, 122, 122]);
        assert_eq!(b.bin_edges.len(), 2);
        // bins are ordered by uncertainty
        let max0 = b.members(0).iter().map(|&i| uncertainty(&recs[i]).unwrap()).fold(0.0, f64::max);
        let min1 = b.members(1).iter().map(|&i| uncertainty(&recs[i]).unwrap()).fold(f64::INFINITY, f64::min);
        assert!(max0 < min1);
        assert_eq!(max0, b.bin_edges[0]);
    }

    #[test]
    fn variance_bins_with_ties_and_single_bin() {
        let recs: Vec<_> = (0..10).map(|_| g(0.0, 2.0, 0.0)).collect();
        let b = variance_bin(&recs, 3).unwrap();
        let sizes = b.sizes();
        assert!(sizes.iter().all(|&s| (3..=4).contains(&s)), "{sizes:?}");
        // ties broken by record order
        assert_eq!(b.assignments, vec![0, 0, 0, 0, 1, 1, 1, 2, 2, 2]);
        let one = variance_bin(&recs, 1).unwrap();
        assert_eq!(one.members(0), (0..10).collect::<Vec<_>>());
        assert!(variance_bin(&recs, 11).is_err());
    }

    #[test]
    fn mv_binning_uses_log_det() {
        let mk = |s: f64| {
            PredictionRecord::new(
                PredictiveDistribution::MvGaussian(
                    MvGaussianPrediction::new(vec![0.0; 2], vec![vec![s, 0.0], vec![0.0, s]]).unwrap(),
                ),
                vec![0.0; 2],
                None,
            )
            .unwrap()
        };
        let recs = vec![mk(4.0), mk(1.0), mk(9.0), mk(2.0)];
        let b = variance_bin(&recs, 2).unwrap();
        assert_eq!(b.assignments, vec![1, 0, 1, 0]);
        assert_relative_eq!(b.bin_edges[0], 2.0 * 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn covered_at_uses_weak_inequalities() {
        let r = g(0.0, 1.0, 0.0);
        assert!(covered_at(&r, 1e-9).unwrap());
        let gp = GaussianPrediction::new(0.0, 1.0).unwrap();
        let (_, hi) = centered_interval(&gp, 0.9).unwrap();
        assert!(covered_at(&g(0.0, 1.0, hi), 0.9).unwrap());
    }
}
