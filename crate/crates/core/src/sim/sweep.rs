//! Half-plane e-value monitoring across drift magnitudes and seeds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::robot::{run_robot_sim, seeded, RobotSimConfig};
use crate::dist::PredictiveDistribution;
use crate::error::Result;
use crate::seqtest::{monitor_step_halfplane, EValueConfig, MartingaleState};

const DIRECTION_STREAM: u64 = 2;

/// Monitor outcome of one `(multiplier, seed)` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub alarmed: bool,
    pub first_crossing: Option<u64>,
    pub log_e_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeRow {
    pub t: u64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierSummary {
    pub multiplier: f64,
    pub n_seeds: usize,
    pub alarms: usize,
    /// Median first crossing among seeds that alarmed.
    pub median_first_crossing: Option<f64>,
    /// Median over all seeds with non-crossing seeds counted as `T + 1`.
    pub censored_median_first_crossing: f64,
    /// Per-step 5%/50%/95% quantiles of `E_t` across seeds.
    pub envelope: Vec<EnvelopeRow>,
    #[serde(skip)]
    pub runs: Vec<SeedRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub monitor: EValueConfig,
    pub n_steps: usize,
    pub summaries: Vec<MultiplierSummary>,
}

/// Runs one seed through the simulator and the half-plane monitor.
pub fn monitor_robot_run(config: &RobotSimConfig, monitor: &EValueConfig) -> Result<SeedRun> {
    let run = run_robot_sim(config)?;
    let mut rng = seeded(config.seed, DIRECTION_STREAM);
    let mut state = MartingaleState::new();
    let mut trace = Vec::with_capacity(run.records.len());
    for r in &run.records {
        let PredictiveDistribution::Particles(cloud) = &r.prediction else { unreachable!() };
        state = monitor_step_halfplane(&state, cloud, &r.outcome, monitor, &mut rng)?;
        trace.push(state.log_e);
    }
    Ok(SeedRun { seed: config.seed, alarmed: state.alarmed, first_crossing: state.first_crossing, log_e_trace: trace })
}

/// Median of a non-empty slice (mean of the two middle values for even length).
pub(crate) fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Seeds are `base.seed, base.seed + 1, …`; every multiplier sees the same seeds.
pub fn drift_sweep(
    base: &RobotSimConfig,
    multipliers: &[f64],
    n_seeds: usize,
    monitor: &EValueConfig,
) -> Result<SweepReport> {
    let jobs: Vec<(usize, u64)> =
        (0..multipliers.len()).flat_map(|i| (0..n_seeds as u64).map(move |s| (i, s))).collect();
    let runs = jobs
        .par_iter()
        .map(|&(i, s)| {
            let cfg = RobotSimConfig { drift_multiplier: multipliers[i], seed: base.seed + s, ..base.clone() };
            monitor_robot_run(&cfg, monitor)
        })
        .collect::<Result<Vec<_>>>()?;
    let t_max = base.n_steps;
    let summaries = multipliers
        .iter()
        .enumerate()
        .map(|(i, &multiplier)| {
            let runs: Vec<SeedRun> = runs[i * n_seeds..(i + 1) * n_seeds].to_vec();
            summarize(multiplier, runs, t_max)
        })
        .collect();
    Ok(SweepReport { monitor: *monitor, n_steps: t_max, summaries })
}

fn summarize(multiplier: f64, runs: Vec<SeedRun>, t_max: usize) -> MultiplierSummary {
    let alarms = runs.iter().filter(|r| r.alarmed).count();
    let mut crossings: Vec<f64> = runs.iter().filter_map(|r| r.first_crossing.map(|t| t as f64)).collect();
    let median_first_crossing = (!crossings.is_empty()).then(|| median(&mut crossings));
    let mut censored: Vec<f64> =
        runs.iter().map(|r| r.first_crossing.map_or((t_max + 1) as f64, |t| t as f64)).collect();
    let censored_median_first_crossing = if runs.is_empty() { (t_max + 1) as f64 } else { median(&mut censored) };
    let envelope = if runs.is_empty() {
        vec![]
    } else {
        (0..t_max)
            .map(|t| {
                let mut col: Vec<f64> = runs.iter().map(|r| r.log_e_trace[t].exp()).collect();
                col.sort_by(f64::total_cmp);
                EnvelopeRow {
                    t: t as u64 + 1,
                    q05: quantile_sorted(&col, 0.05),
                    q50: quantile_sorted(&col, 0.5),
                    q95: quantile_sorted(&col, 0.95),
                }
            })
            .collect()
    };
    MultiplierSummary {
        multiplier,
        n_seeds: runs.len(),
        alarms,
        median_first_crossing,
        censored_median_first_crossing,
        envelope,
        runs,
    }
}
