//! End-to-end runs: metric → hypothesis → testing, selected by name.
//!
//! ```
//! use calcheck::dist::PredictionRecord;
//! use calcheck::pipeline::{run_check, RecipeConfig};
//!
//! let records: Vec<_> = (0..200)
//!     .map(|i| PredictionRecord::gaussian(0.0, 1.0, ((i as f64 + 0.5) / 200.0 - 0.5) * 3.0).unwrap())
//!     .collect();
//! let report = run_check(&RecipeConfig::default(), &records).unwrap();
//! println!("{:?}", report.decision);
//! ```

mod config;
mod registry;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::RecipeConfig;
pub use registry::{Metric, MetricFamily, MetricOutput, Registry, Testing};

use crate::dist::{ModelKind, PredictionRecord};
use crate::error::{Error, Result};
use crate::hyptest::{Decision, TestReport};
use crate::metric::{ecdf_eval, uncertainty, variance_bin, LevelGrid};
use crate::seqtest::{monitor_step_record, MartingaleState};

/// A named table with a header row, written out as CSV by front ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: impl Into<String>, header: &[&str]) -> Self {
        Table { name: name.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: vec![] }
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    /// SHA-256 of the input, hex encoded.
    pub input_digest: String,
    pub config: RecipeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinReport {
    pub bin: usize,
    pub n: usize,
    pub uncertainty_min: f64,
    pub uncertainty_max: f64,
    pub report: TestReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorSummary {
    pub final_state: MartingaleState,
    pub complete: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interruption: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: u64,
    pub e_value: f64,
    pub log_e: f64,
    pub threshold: f64,
    pub alarmed: bool,
}

/// Decision first, then the evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub decision: Decision,
    pub report: TestReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bins: Option<Vec<BinReport>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monitor: Option<MonitorSummary>,
    pub curves: Vec<Table>,
    pub provenance: Provenance,
}

impl RunReport {
    pub fn rejects(&self) -> bool {
        self.decision.is_reject()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("bad report: {e}")))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn records_digest(records: &[PredictionRecord]) -> String {
    sha256_hex(format!("{records:?}").as_bytes())
}

fn provenance(config: &RecipeConfig, digest: String) -> Provenance {
    Provenance {
        tool: "calcheck".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        input_digest: digest,
        config: config.clone(),
    }
}

/// Runs configured checks against a registry of strategies.
#[derive(Clone)]
pub struct Pipeline {
    registry: Registry,
}

impl Default for Pipeline {
    fn default() -> Self {
        Pipeline { registry: Registry::builtin() }
    }
}

impl Pipeline {
    pub fn new(registry: Registry) -> Self {
        Pipeline { registry }
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    /// Rejects incompatible slot combinations without touching any data.
    pub fn validate(&self, config: &RecipeConfig) -> Result<(std::sync::Arc<dyn Metric>, std::sync::Arc<dyn Testing>)> {
        if !(config.alpha > 0.0 && config.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} outside (0,1)", config.alpha)));
        }
        if !(0.0..0.5).contains(&config.hypothesis.tolerance) {
            return Err(Error::Config(format!("tolerance {} outside [0, 0.5)", config.hypothesis.tolerance)));
        }
        let metric = self.registry.metric(&config.metric)?;
        let testing = self.registry.testing(&config.testing)?;
        if !metric.supports(config.model) {
            return Err(Error::Config(format!(
                "metric `{}` does not support {} predictions",
                metric.name(),
                config.model
            )));
        }
        if !testing.supports(metric.as_ref()) {
            return Err(Error::Config(format!(
                "testing `{}` cannot consume the `{}` metric",
                testing.name(),
                metric.name()
            )));
        }
        testing.validate(metric.as_ref(), config)?;
        if let Some(k) = config.bins {
            if k == 0 {
                return Err(Error::Config("bins must be at least 1".into()));
            }
            if config.testing == "evalue_monitor" {
                return Err(Error::Config("variance binning wraps offline checks only".into()));
            }
            if !matches!(config.model, ModelKind::Gaussian | ModelKind::Parametric | ModelKind::MvGaussian) {
                return Err(Error::Config(format!(
                    "{} predictions expose no scalar uncertainty to bin on",
                    config.model
                )));
            }
        }
        Ok((metric, testing))
    }

    fn check_records(config: &RecipeConfig, records: &[PredictionRecord]) -> Result<()> {
        if records.is_empty() {
            return Err(Error::Empty("record list"));
        }
        if let Some(r) = records.iter().find(|r| r.prediction.kind() != config.model) {
            return Err(Error::Config(format!(
                "record of kind {} in a run configured for {}",
                r.prediction.kind(),
                config.model
            )));
        }
        Ok(())
    }

    fn inner_check(
        &self,
        metric: &dyn Metric,
        testing: &dyn Testing,
        config: &RecipeConfig,
        records: &[PredictionRecord],
    ) -> Result<(TestReport, MetricOutput)> {
        let output = metric.evaluate(records, config)?;
        let report = testing.run(&output, records, config)?;
        Ok((report, output))
    }

    pub fn run_check(&self, config: &RecipeConfig, records: &[PredictionRecord]) -> Result<RunReport> {
        self.run_check_with_digest(config, records, records_digest(records))
    }

    /// As [`Pipeline::run_check`] with the input digest supplied by the caller
    /// (for instance the digest of the raw input file).
    pub fn run_check_with_digest(
        &self,
        config: &RecipeConfig,
        records: &[PredictionRecord],
        digest: String,
    ) -> Result<RunReport> {
        let (metric, testing) = self.validate(config)?;
        Self::check_records(config, records)?;
        let (mut report, bins, curves) = match config.bins {
            None => {
                let (report, output) = self.inner_check(metric.as_ref(), testing.as_ref(), config, records)?;
                let curves = curve_tables(&output, &report, config)?;
                (report, None, curves)
            }
            Some(k) => {
                let vb = variance_bin(records, k)?;
                let inner = RecipeConfig { alpha: config.alpha / k as f64, bins: None, ..config.clone() };
                let mut bin_reports = Vec::with_capacity(k);
                let mut curves = Vec::new();
                for b in 0..k {
                    let members: Vec<PredictionRecord> =
                        vb.members(b).into_iter().map(|i| records[i].clone()).collect();
                    let u = members.iter().map(uncertainty).collect::<Result<Vec<_>>>()?;
                    let (r, output) = self.inner_check(metric.as_ref(), testing.as_ref(), &inner, &members)?;
                    for mut t in curve_tables(&output, &r, &inner)? {
                        t.name = format!("bin{b}_{}", t.name);
                        curves.push(t);
                    }
                    bin_reports.push(BinReport {
                        bin: b,
                        n: members.len(),
                        uncertainty_min: u.iter().copied().fold(f64::INFINITY, f64::min),
                        uncertainty_max: u.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                        report: r,
                    });
                }
                let min_p = bin_reports.iter().map(|b| b.report.p_value).fold(f64::INFINITY, f64::min);
                let report = TestReport {
                    test: format!("variance_binned({})", testing.name()),
                    decision: Decision::from_reject(bin_reports.iter().any(|b| b.report.rejects())),
                    statistic: min_p,
                    threshold: config.alpha / k as f64,
                    alpha: config.alpha,
                    p_value: (min_p * k as f64).min(1.0),
                    per_level: None,
                    band: None,
                    recipe_config: None,
                };
                (report, Some(bin_reports), curves)
            }
        };
        report.recipe_config = Some(serde_json::to_value(config).expect("config serializes"));
        Ok(RunReport {
            decision: report.decision,
            report,
            bins,
            monitor: None,
            curves,
            provenance: provenance(config, digest),
        })
    }

    /// Steps the e-value monitor through `stream` in order, calling `on_step`
    /// after every record. A failing stream item ends the run with a partial,
    /// incomplete report holding the last good state.
    pub fn run_monitor<I, F>(&self, config: &RecipeConfig, stream: I, mut on_step: F) -> Result<RunReport>
    where
        I: IntoIterator<Item = Result<PredictionRecord>>,
        F: FnMut(&TraceRow),
    {
        let ev = config.evalue_or_default().map_err(|e| Error::Config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut state = MartingaleState::new();
        let mut hasher = Sha256::new();
        let mut trace = Table::new("etrace", &["t", "e_value", "log_e", "threshold", "alarmed"]);
        let mut interruption = None;
        for item in stream {
            let step = item.and_then(|r| {
                if r.prediction.kind() != config.model {
                    return Err(Error::Config(format!(
                        "record of kind {} in a run configured for {}",
                        r.prediction.kind(),
                        config.model
                    )));
                }
                hasher.update(format!("{r:?}").as_bytes());
                monitor_step_record(&state, &r, &ev, &mut rng)
            });
            match step {
                Ok(next) => {
                    state = next;
                    let row = TraceRow {
                        t: state.t,
                        e_value: state.e_value(),
                        log_e: state.log_e,
                        threshold: ev.threshold(),
                        alarmed: state.alarmed,
                    };
                    trace.rows.push(vec![
                        row.t as f64,
                        row.e_value,
                        row.log_e,
                        row.threshold,
                        f64::from(u8::from(row.alarmed)),
                    ]);
                    on_step(&row);
                }
                Err(e @ Error::Config(_)) => return Err(e),
                Err(e) => {
                    interruption = Some(e.to_string());
                    break;
                }
            }
        }
        if state.t == 0 {
            if let Some(msg) = interruption {
                return Err(Error::invalid(format!("no usable records: {msg}")));
            }
            return Err(Error::Empty("record stream"));
        }
        let mut report = registry::evalue_report(&state, ev.alpha);
        report.recipe_config = Some(serde_json::to_value(config).expect("config serializes"));
        let digest: String = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
        Ok(RunReport {
            decision: report.decision,
            report,
            bins: None,
            monitor: Some(MonitorSummary { final_state: state, complete: interruption.is_none(), interruption }),
            curves: vec![trace],
            provenance: provenance(config, digest),
        })
    }
}

fn curve_tables(output: &MetricOutput, report: &TestReport, config: &RecipeConfig) -> Result<Vec<Table>> {
    match output {
        MetricOutput::Coverage(curves) => {
            let mut t = Table::new("coverage", &["curve", "level", "coverage", "count", "n", "lower", "upper"]);
            let per_level = report.per_level.as_deref().unwrap_or(&[]);
            for (ci, c) in curves.iter().enumerate() {
                let k = c.levels().len();
                for (j, (&l, &count)) in c.levels().levels().iter().zip(c.counts()).enumerate() {
                    let n = c.n() as f64;
                    let (lo, hi) = per_level
                        .get(ci * k + j)
                        .map_or((f64::NAN, f64::NAN), |r| (r.lower_bound as f64 / n, r.upper_bound as f64 / n));
                    t.rows.push(vec![ci as f64, l, count as f64 / n, count as f64, n, lo, hi]);
                }
            }
            Ok(vec![t])
        }
        MetricOutput::Pit(sample) => {
            let mut t = Table::new("ecdf", &["level", "ecdf", "lower", "upper"]);
            let grid = ecdf_grid(&config.levels);
            for l in grid {
                let (lo, hi) = report.band.map_or((f64::NAN, f64::NAN), |b| (b.lower(l), b.upper(l)));
                t.rows.push(vec![l, ecdf_eval(sample, l)?, lo, hi]);
            }
            let mut h = Table::new("pit_histogram", &["bin_lo", "bin_hi", "count"]);
            let nb = 20;
            let mut counts = vec![0u64; nb];
            for &v in sample.values() {
                counts[((v * nb as f64) as usize).min(nb - 1)] += 1;
            }
            for (i, c) in counts.into_iter().enumerate() {
                h.rows.push(vec![i as f64 / nb as f64, (i + 1) as f64 / nb as f64, c as f64]);
            }
            Ok(vec![t, h])
        }
    }
}

/// Percent grid plus the configured levels, sorted.
fn ecdf_grid(levels: &LevelGrid) -> Vec<f64> {
    let mut g: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).chain(levels.levels().iter().copied()).collect();
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}

/// [`Pipeline::run_check`] with the built-in strategies.
pub fn run_check(config: &RecipeConfig, records: &[PredictionRecord]) -> Result<RunReport> {
    Pipeline::default().run_check(config, records)
}

/// [`Pipeline::run_monitor`] with the built-in strategies.
pub fn run_monitor<I, F>(config: &RecipeConfig, stream: I, on_step: F) -> Result<RunReport>
where
    I: IntoIterator<Item = Result<PredictionRecord>>,
    F: FnMut(&TraceRow),
{
    Pipeline::default().run_monitor(config, stream, on_step)
}
