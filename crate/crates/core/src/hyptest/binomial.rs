//! Exact Binomial tails, summed in log space.

use statrs::function::factorial::ln_binomial;

/// Slack on log-probability comparisons so that exact ties such as
/// `P(C ≤ 0) = 0.5` against `a = 0.5` are not lost to rounding.
const LOG_SLACK: f64 = 1e-12;

fn ln_pmf(n: u64, k: u64, p: f64) -> f64 {
    ln_binomial(n, k) + k as f64 * p.ln() + (n - k) as f64 * (-p).ln_1p()
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln P(C ≤ c)`.
pub fn ln_cdf(n: u64, p: f64, c: u64) -> f64 {
    if c >= n {
        return 0.0;
    }
    (0..=c).fold(f64::NEG_INFINITY, |acc, k| log_add(acc, ln_pmf(n, k, p)))
}

/// `ln P(C ≥ c)`.
pub fn ln_sf(n: u64, p: f64, c: u64) -> f64 {
    if c == 0 {
        return 0.0;
    }
    if c > n {
        return f64::NEG_INFINITY;
    }
    (c..=n).fold(f64::NEG_INFINITY, |acc, k| log_add(acc, ln_pmf(n, k, p)))
}

pub fn cdf(n: u64, p: f64, c: u64) -> f64 {
    ln_cdf(n, p, c).exp().min(1.0)
}

pub fn sf(n: u64, p: f64, c: u64) -> f64 {
    ln_sf(n, p, c).exp().min(1.0)
}

/// Smallest `c` with `P(C ≤ c) ≥ a`.
pub fn lower_quantile(n: u64, p: f64, a: f64) -> u64 {
    let target = a.ln() - LOG_SLACK;
    let mut acc = f64::NEG_INFINITY;
    for k in 0..n {
        acc = log_add(acc, ln_pmf(n, k, p));
        if acc >= target {
            return k;
        }
    }
    n
}

/// Largest `c` with `P(C ≥ c) ≥ a`.
pub fn upper_quantile(n: u64, p: f64, a: f64) -> u64 {
    let target = a.ln() - LOG_SLACK;
    let mut acc = f64::NEG_INFINITY;
    for k in (1..=n).rev() {
        acc = log_add(acc, ln_pmf(n, k, p));
        if acc >= target {
            return k;
        }
    }
    0
}
