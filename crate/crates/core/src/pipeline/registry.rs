//! Named metric and testing strategies.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RecipeConfig;
use crate::dist::{ModelKind, PredictionRecord};
use crate::error::{Error, Result};
use crate::hyptest::{binom_curve_test, ks_test, Correction, Decision, Sidedness, TestReport};
use crate::metric::{coverage_counts, fold, halfplane_coverage, pit, sample_directions, CoverageCurve, PitSample};
use crate::seqtest::{monitor_step_record, MartingaleState};

/// What a metric hands to the testing slot.
#[derive(Debug, Clone, PartialEq)]
pub enum MetricOutput {
    /// One curve per reduction (a single curve except for half-plane directions).
    Coverage(Vec<CoverageCurve>),
    Pit(PitSample),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricFamily {
    Coverage,
    Pit,
}

pub trait Metric: Send + Sync {
    fn name(&self) -> &'static str;
    fn family(&self) -> MetricFamily;
    fn supports(&self, model: ModelKind) -> bool;
    /// Folded PIT samples only.
    fn folded(&self) -> bool {
        false
    }
    fn evaluate(&self, records: &[PredictionRecord], config: &RecipeConfig) -> Result<MetricOutput>;
}

pub trait Testing: Send + Sync {
    fn name(&self) -> &'static str;
    fn supports(&self, metric: &dyn Metric) -> bool;
    /// Slot combinations the strategy refuses for reasons beyond the metric family.
    fn validate(&self, _metric: &dyn Metric, _config: &RecipeConfig) -> Result<()> {
        Ok(())
    }
    fn run(&self, output: &MetricOutput, records: &[PredictionRecord], config: &RecipeConfig) -> Result<TestReport>;
}

struct CoverageMetric;

impl Metric for CoverageMetric {
    fn name(&self) -> &'static str {
        "coverage"
    }
    fn family(&self) -> MetricFamily {
        MetricFamily::Coverage
    }
    fn supports(&self, model: ModelKind) -> bool {
        model != ModelKind::Particles
    }
    fn evaluate(&self, records: &[PredictionRecord], config: &RecipeConfig) -> Result<MetricOutput> {
        Ok(MetricOutput::Coverage(vec![coverage_counts(records, &config.levels)?]))
    }
}

struct PitMetric {
    folded: bool,
}

impl Metric for PitMetric {
    fn name(&self) -> &'static str {
        if self.folded {
            "folded_ks"
        } else {
            "pit_ks"
        }
    }
    fn family(&self) -> MetricFamily {
        MetricFamily::Pit
    }
    fn supports(&self, model: ModelKind) -> bool {
        model.has_cdf() || model == ModelKind::MvGaussian
    }
    fn folded(&self) -> bool {
        self.folded
    }
    fn evaluate(&self, records: &[PredictionRecord], _config: &RecipeConfig) -> Result<MetricOutput> {
        let u = pit(records)?;
        Ok(MetricOutput::Pit(if self.folded { fold(&u)? } else { u }))
    }
}

struct HalfPlaneMetric;

impl Metric for HalfPlaneMetric {
    fn name(&self) -> &'static str {
        "halfplane"
    }
    fn family(&self) -> MetricFamily {
        MetricFamily::Coverage
    }
    fn supports(&self, model: ModelKind) -> bool {
        model == ModelKind::Particles
    }
    fn evaluate(&self, records: &[PredictionRecord], config: &RecipeConfig) -> Result<MetricOutput> {
        let p = records.first().ok_or(Error::Empty("record list"))?.prediction.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let dirs = sample_directions(p, config.probes_per_dim.max(1) * p, &mut rng)?;
        Ok(MetricOutput::Coverage(halfplane_coverage(records, &config.levels, &dirs)?))
    }
}

struct BinomTesting(Correction);

impl Testing for BinomTesting {
    fn name(&self) -> &'static str {
        match self.0 {
            Correction::Bonferroni => "binom_bonferroni",
            Correction::Holm => "binom_holm",
        }
    }
    fn supports(&self, metric: &dyn Metric) -> bool {
        metric.family() == MetricFamily::Coverage
    }
    fn run(&self, output: &MetricOutput, _records: &[PredictionRecord], config: &RecipeConfig) -> Result<TestReport> {
        let MetricOutput::Coverage(curves) = output else {
            return Err(Error::Config("Binomial tests need coverage counts".into()));
        };
        // Bonferroni across curves on top of the per-curve correction
        let per_curve = config.alpha / curves.len() as f64;
        let reports = curves
            .iter()
            .map(|c| binom_curve_test(c, config.hypothesis, per_curve, self.0))
            .collect::<Result<Vec<_>>>()?;
        if reports.len() == 1 {
            let mut r = reports.into_iter().next().expect("one report");
            r.alpha = config.alpha;
            return Ok(r);
        }
        let total_k: usize = curves.iter().map(|c| c.levels().len()).sum();
        let per_level: Vec<_> = reports.iter().flat_map(|r| r.per_level.clone().unwrap_or_default()).collect();
        let min_p = per_level.iter().map(|l| l.p_value).fold(f64::INFINITY, f64::min);
        Ok(TestReport {
            test: self.name().into(),
            decision: Decision::from_reject(reports.iter().any(|r| r.rejects())),
            statistic: min_p,
            threshold: config.alpha / total_k as f64,
            alpha: config.alpha,
            p_value: (min_p * total_k as f64).min(1.0),
            per_level: Some(per_level),
            band: None,
            recipe_config: None,
        })
    }
}

struct KsTesting;

impl Testing for KsTesting {
    fn name(&self) -> &'static str {
        "ks"
    }
    fn supports(&self, metric: &dyn Metric) -> bool {
        metric.family() == MetricFamily::Pit
    }
    fn validate(&self, metric: &dyn Metric, config: &RecipeConfig) -> Result<()> {
        let h = config.hypothesis;
        if h.sidedness == Sidedness::OneSidedOverconfidence && !metric.folded() {
            return Err(Error::Config("the one-sided KS test needs the folded_ks metric".into()));
        }
        if h.sidedness == Sidedness::TwoSided && h.tolerance > 0.0 {
            return Err(Error::Config("a tolerance band is only defined for the one-sided folded KS test".into()));
        }
        Ok(())
    }
    fn run(&self, output: &MetricOutput, _records: &[PredictionRecord], config: &RecipeConfig) -> Result<TestReport> {
        let MetricOutput::Pit(sample) = output else {
            return Err(Error::Config("the KS test needs a PIT sample".into()));
        };
        ks_test(sample, config.hypothesis, config.alpha)
    }
}

/// Offline replay of the e-value monitor over a batch.
struct EValueTesting;

impl Testing for EValueTesting {
    fn name(&self) -> &'static str {
        "evalue_monitor"
    }
    fn supports(&self, _metric: &dyn Metric) -> bool {
        true
    }
    fn validate(&self, _metric: &dyn Metric, config: &RecipeConfig) -> Result<()> {
        config.evalue_or_default().map(|_| ()).map_err(|e| Error::Config(e.to_string()))
    }
    fn run(&self, _output: &MetricOutput, records: &[PredictionRecord], config: &RecipeConfig) -> Result<TestReport> {
        let ev = config.evalue_or_default()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut state = MartingaleState::new();
        for r in records {
            state = monitor_step_record(&state, r, &ev, &mut rng)?;
        }
        Ok(evalue_report(&state, ev.alpha))
    }
}

/// Decision = alarmed, statistic = `sup_t E_t`, p-value `min(1, 1/sup E)`.
pub(crate) fn evalue_report(state: &MartingaleState, alpha: f64) -> TestReport {
    let sup_e = state.peak_log_e.exp();
    TestReport {
        test: "evalue_monitor".into(),
        decision: Decision::from_reject(state.alarmed),
        statistic: sup_e,
        threshold: 1.0 / alpha,
        alpha,
        p_value: (1.0 / sup_e).min(1.0),
        per_level: None,
        band: None,
        recipe_config: None,
    }
}

/// Strategies by name.
#[derive(Clone, Default)]
pub struct Registry {
    metrics: BTreeMap<String, Arc<dyn Metric>>,
    testings: BTreeMap<String, Arc<dyn Testing>>,
}

impl Registry {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn builtin() -> Self {
        let mut r = Registry::empty();
        r.register_metric(Arc::new(CoverageMetric));
        r.register_metric(Arc::new(PitMetric { folded: false }));
        r.register_metric(Arc::new(PitMetric { folded: true }));
        r.register_metric(Arc::new(HalfPlaneMetric));
        r.register_testing(Arc::new(BinomTesting(Correction::Bonferroni)));
        r.register_testing(Arc::new(BinomTesting(Correction::Holm)));
        r.register_testing(Arc::new(KsTesting));
        r.register_testing(Arc::new(EValueTesting));
        r
    }

    pub fn register_metric(&mut self, m: Arc<dyn Metric>) {
        self.metrics.insert(m.name().to_string(), m);
    }

    pub fn register_testing(&mut self, t: Arc<dyn Testing>) {
        self.testings.insert(t.name().to_string(), t);
    }

    pub fn metric(&self, name: &str) -> Result<Arc<dyn Metric>> {
        self.metrics.get(name).cloned().ok_or_else(|| {
            Error::Config(format!("unknown metric `{name}` (known: {})", self.metric_names().join(", ")))
        })
    }

    pub fn testing(&self, name: &str) -> Result<Arc<dyn Testing>> {
        self.testings.get(name).cloned().ok_or_else(|| {
            Error::Config(format!("unknown testing `{name}` (known: {})", self.testing_names().join(", ")))
        })
    }

    pub fn metric_names(&self) -> Vec<&str> {
        self.metrics.keys().map(String::as_str).collect()
    }

    pub fn testing_names(&self) -> Vec<&str> {
        self.testings.keys().map(String::as_str).collect()
    }
}
