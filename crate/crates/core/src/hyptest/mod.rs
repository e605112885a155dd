//! Offline hypothesis tests over coverage counts and PIT samples.
//!
//! | test | statistic | rejects when |
//! |------|-----------|--------------|
//! | Binomial, two-sided | count `c` | `P_{λ−ε}(C ≤ c) < a/2` or `P_{λ+ε}(C ≥ c) < a/2` |
//! | Binomial, one-sided | count `c` | `P_{λ−ε}(C ≤ c) < a` |
//! | KS, two-sided | `D` | `D > √(ln(2/α)/2N)` |
//! | KS, one-sided folded | `D⁺` | `D⁺ > √(ln(1/α)/2N) + ε` |
//!
//! Multiple levels are combined with [`bonferroni`] or [`holm`].

pub mod binomial;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::{CoverageCurve, PitSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    TwoSided,
    /// Rejects only when coverage is too low.
    OneSidedOverconfidence,
}

impl std::str::FromStr for Sidedness {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two" | "two_sided" => Ok(Sidedness::TwoSided),
            "one" | "one_sided" | "one_sided_overconfidence" => Ok(Sidedness::OneSidedOverconfidence),
            _ => Err(Error::Config(format!("unknown sidedness `{s}` (expected one|two)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSpec {
    pub sidedness: Sidedness,
    /// Tolerance in coverage units.
    #[serde(default)]
    pub tolerance: f64,
}

impl HypothesisSpec {
    pub fn new(sidedness: Sidedness, tolerance: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&tolerance) {
            return Err(Error::invalid(format!("tolerance {tolerance} outside [0, 0.5)")));
        }
        Ok(HypothesisSpec { sidedness, tolerance })
    }

    pub fn two_sided() -> Self {
        HypothesisSpec { sidedness: Sidedness::TwoSided, tolerance: 0.0 }
    }

    pub fn one_sided() -> Self {
        HypothesisSpec { sidedness: Sidedness::OneSidedOverconfidence, tolerance: 0.0 }
    }

    pub fn with_tolerance(self, tolerance: f64) -> Result<Self> {
        Self::new(self.sidedness, tolerance)
    }
}

impl Default for HypothesisSpec {
    fn default() -> Self {
        Self::two_sided()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accept,
    Reject,
}

impl Decision {
    pub fn from_reject(reject: bool) -> Self {
        if reject {
            Decision::Reject
        } else {
            Decision::Accept
        }
    }

    pub fn is_reject(self) -> bool {
        self == Decision::Reject
    }
}

/// Outcome of one Binomial test at one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelResult {
    pub level: f64,
    pub count: u64,
    pub n: u64,
    pub p_value: f64,
    /// Smallest accepted count.
    pub lower_bound: u64,
    /// Largest accepted count.
    pub upper_bound: u64,
    pub reject: bool,
}

/// KS acceptance band around the diagonal: `ĉ(λ) ∈ [λ − below, λ + above]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsBand {
    pub below: f64,
    pub above: Option<f64>,
}

impl KsBand {
    pub fn lower(&self, level: f64) -> f64 {
        (level - self.below).max(0.0)
    }

    pub fn upper(&self, level: f64) -> f64 {
        self.above.map_or(1.0, |a| (level + a).min(1.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub test: String,
    pub decision: Decision,
    pub statistic: f64,
    pub threshold: f64,
    pub alpha: f64,
    pub p_value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_level: Option<Vec<LevelResult>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub band: Option<KsBand>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recipe_config: Option<serde_json::Value>,
}

impl TestReport {
    pub fn rejects(&self) -> bool {
        self.decision.is_reject()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("alpha {alpha} outside (0,1)")))
    }
}

/// Smallest `c` with `P(C ≤ c) ≥ a`, `C ~ Binomial(n, p)`.
pub fn binom_lower_quantile(n: u64, p: f64, a: f64) -> Result<u64> {
    check_binom_args(n, p)?;
    check_alpha(a)?;
    Ok(binomial::lower_quantile(n, p, a))
}

/// Largest `c` with `P(C ≥ c) ≥ a`.
pub fn binom_upper_quantile(n: u64, p: f64, a: f64) -> Result<u64> {
    check_binom_args(n, p)?;
    check_alpha(a)?;
    Ok(binomial::upper_quantile(n, p, a))
}

/// `P(C ≤ count)` for `C ~ Binomial(n, level)`.
pub fn binom_p_value(count: u64, n: u64, level: f64) -> Result<f64> {
    check_binom_args(n, level)?;
    if count > n {
        return Err(Error::invalid(format!("count {count} exceeds n = {n}")));
    }
    Ok(binomial::cdf(n, level, count))
}

fn check_binom_args(n: u64, p: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("Binomial needs n ≥ 1"));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("Binomial probability {p} outside (0,1)")));
    }
    Ok(())
}

/// Exact Binomial test of one coverage count at per-test level `alpha`.
pub fn binom_test(count: u64, n: u64, level: f64, spec: HypothesisSpec, alpha: f64) -> Result<LevelResult> {
    check_alpha(alpha)?;
    if count > n {
        return Err(Error::invalid(format!("count {count} exceeds n = {n}")));
    }
    let eps = spec.tolerance;
    let below = level - eps;
    if !(below > 0.0 && below < 1.0) {
        return Err(Error::invalid(format!("level {level} − tolerance {eps} leaves (0,1)")));
    }
    match spec.sidedness {
        Sidedness::OneSidedOverconfidence => {
            check_binom_args(n, below)?;
            let p = binomial::cdf(n, below, count);
            let lower_bound = binomial::lower_quantile(n, below, alpha);
            Ok(LevelResult { level, count, n, p_value: p, lower_bound, upper_bound: n, reject: count < lower_bound })
        }
        Sidedness::TwoSided => {
            let above = level + eps;
            if !(above > 0.0 && above < 1.0) {
                return Err(Error::invalid(format!("level {level} + tolerance {eps} leaves (0,1)")));
            }
            check_binom_args(n, below)?;
            let lo_tail = binomial::cdf(n, below, count);
            let hi_tail = binomial::sf(n, above, count);
            let lower_bound = binomial::lower_quantile(n, below, alpha / 2.0);
            let upper_bound = binomial::upper_quantile(n, above, alpha / 2.0);
            Ok(LevelResult {
                level,
                count,
                n,
                p_value: (2.0 * lo_tail.min(hi_tail)).min(1.0),
                lower_bound,
                upper_bound,
                reject: count < lower_bound || count > upper_bound,
            })
        }
    }
}

/// Rejects iff any `p_k < α/K`.
pub fn bonferroni(p_values: &[f64], alpha: f64) -> Result<TestReport> {
    check_alpha(alpha)?;
    let k = p_values.len();
    if k == 0 {
        return Err(Error::Empty("p-value list"));
    }
    let min_p = p_values.iter().copied().fold(f64::INFINITY, f64::min);
    let threshold = alpha / k as f64;
    Ok(TestReport {
        test: "bonferroni".into(),
        decision: Decision::from_reject(min_p < threshold),
        statistic: min_p,
        threshold,
        alpha,
        p_value: (min_p * k as f64).min(1.0),
        per_level: None,
        band: None,
        recipe_config: None,
    })
}

/// Indices rejected by the Holm step-down procedure.
pub fn holm_rejections(p_values: &[f64], alpha: f64) -> Vec<usize> {
    let k = p_values.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    order.into_iter().enumerate().take_while(|&(i, j)| p_values[j] < alpha / (k - i) as f64).map(|(_, j)| j).collect()
}

/// Holm step-down; the global decision rejects iff any hypothesis is rejected.
pub fn holm(p_values: &[f64], alpha: f64) -> Result<TestReport> {
    let mut report = bonferroni(p_values, alpha)?;
    report.test = "holm".into();
    report.decision = Decision::from_reject(!holm_rejections(p_values, alpha).is_empty());
    Ok(report)
}

/// How per-level Binomial tests are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correction {
    Bonferroni,
    Holm,
}

/// Binomial test at every level of a coverage curve, combined across levels.
/// Per-level bounds are those of the Bonferroni-adjusted test at `α/K`.
pub fn binom_curve_test(
    curve: &CoverageCurve,
    spec: HypothesisSpec,
    alpha: f64,
    correction: Correction,
) -> Result<TestReport> {
    check_alpha(alpha)?;
    let k = curve.levels().len();
    let per_test = alpha / k as f64;
    let mut per_level = curve
        .levels()
        .levels()
        .iter()
        .zip(curve.counts())
        .map(|(&l, &c)| binom_test(c, curve.n(), l, spec, per_test))
        .collect::<Result<Vec<_>>>()?;
    let p: Vec<f64> = per_level.iter().map(|r| r.p_value).collect();
    let mut report = match correction {
        Correction::Bonferroni => bonferroni(&p, alpha)?,
        Correction::Holm => {
            let rejected = holm_rejections(&p, alpha);
            per_level.iter_mut().for_each(|r| r.reject = false);
            rejected.iter().for_each(|&j| per_level[j].reject = true);
            holm(&p, alpha)?
        }
    };
    report.test = match correction {
        Correction::Bonferroni => "binom_bonferroni".into(),
        Correction::Holm => "binom_holm".into(),
    };
    report.per_level = Some(per_level);
    Ok(report)
}

/// `D = sup|F̂ − λ|` (two-sided) or `D⁺ = sup(λ − F̂)` (one-sided, folded only).
pub fn ks_statistic(sample: &PitSample, spec: HypothesisSpec) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::Empty("PIT sample"));
    }
    let v = sample.sorted();
    let n = v.len() as f64;
    match spec.sidedness {
        Sidedness::TwoSided => {
            Ok(v.iter().enumerate().map(|(i, &x)| ((i + 1) as f64 / n - x).max(x - i as f64 / n)).fold(0.0, f64::max))
        }
        Sidedness::OneSidedOverconfidence => {
            if !sample.is_folded() {
                return Err(Error::invalid("the one-sided KS statistic needs a folded sample"));
            }
            // λ − F̂(λ) peaks just below each jump, where F̂ = (i−1)/N
            Ok(v.iter().enumerate().map(|(i, &x)| x - i as f64 / n).fold(0.0, f64::max))
        }
    }
}

/// `√(ln(2/α)/(2N))` two-sided, `√(ln(1/α)/(2N))` one-sided.
pub fn ks_critical(n: u64, alpha: f64, sidedness: Sidedness) -> Result<f64> {
    check_alpha(alpha)?;
    if n == 0 {
        return Err(Error::invalid("KS critical value needs n ≥ 1"));
    }
    let num = match sidedness {
        Sidedness::TwoSided => (2.0 / alpha).ln(),
        Sidedness::OneSidedOverconfidence => (1.0 / alpha).ln(),
    };
    Ok((num / (2.0 * n as f64)).sqrt())
}

/// Inverse of [`ks_critical`]: `min(1, 2e^{−2ND²})` or `e^{−2ND⁺²}`.
pub fn ks_p_value(statistic: f64, n: u64, sidedness: Sidedness) -> Result<f64> {
    if !(0.0..=1.0).contains(&statistic) {
        return Err(Error::invalid(format!("KS statistic {statistic} outside [0,1]")));
    }
    let e = (-2.0 * n as f64 * statistic * statistic).exp();
    Ok(match sidedness {
        Sidedness::TwoSided => (2.0 * e).min(1.0),
        Sidedness::OneSidedOverconfidence => e,
    })
}

pub fn ks_test(sample: &PitSample, spec: HypothesisSpec, alpha: f64) -> Result<TestReport> {
    let n = sample.len() as u64;
    let eps = spec.tolerance;
    if spec.sidedness == Sidedness::TwoSided && eps > 0.0 {
        return Err(Error::Unsupported("a tolerance band is only defined for the one-sided folded KS test".into()));
    }
    let d = ks_statistic(sample, spec)?;
    let c = ks_critical(n, alpha, spec.sidedness)?;
    let (threshold, p_value, band, test) = match spec.sidedness {
        Sidedness::TwoSided => {
            (c, ks_p_value(d, n, Sidedness::TwoSided)?, KsBand { below: c, above: Some(c) }, "ks_two_sided")
        }
        Sidedness::OneSidedOverconfidence => (
            c + eps,
            ks_p_value((d - eps).max(0.0), n, spec.sidedness)?,
            KsBand { below: c + eps, above: None },
            "ks_one_sided",
        ),
    };
    Ok(TestReport {
        test: test.into(),
        decision: Decision::from_reject(d > threshold),
        statistic: d,
        threshold,
        alpha,
        p_value,
        per_level: None,
        band: Some(band),
        recipe_config: None,
    })
}
