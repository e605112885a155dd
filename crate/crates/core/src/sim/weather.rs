//! Synthetic daily temperatures and a sliding-window linear forecaster.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dist::PredictionRecord;
use crate::error::{Error, Result};

const YEAR: f64 = 365.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeatherSimConfig {
    /// Trailing window of the regression, in days.
    pub window: usize,
    pub n_days: usize,
    pub mean_level: f64,
    pub seasonal_amplitude: f64,
    pub noise_sd: f64,
    /// Relative seasonal swing of the noise sd: `sd_t = noise_sd (1 + s cos(2πt/365))`.
    pub noise_seasonality: f64,
    /// Added to every predicted mean, in units of the predicted sd.
    pub injected_mean_bias: f64,
    /// Multiplies every predicted sd.
    pub injected_sd_scale: f64,
    /// Use the OLS one-step prediction standard error instead of the bare
    /// in-window residual sd.
    pub prediction_se: bool,
    pub seed: u64,
}

impl Default for WeatherSimConfig {
    fn default() -> Self {
        WeatherSimConfig {
            window: 30,
            n_days: 395,
            mean_level: 16.9,
            seasonal_amplitude: 8.0,
            noise_sd: 3.0,
            noise_seasonality: 0.3,
            injected_mean_bias: 0.0,
            injected_sd_scale: 1.0,
            prediction_se: true,
            seed: 0,
        }
    }
}

impl WeatherSimConfig {
    /// Mean bias `b` (in sd units) with the sd widened to `√(1 + b²)` so the
    /// predicted variance still matches the mean squared error.
    pub fn with_exact_dispersion_bias(mut self, bias: f64) -> Self {
        self.injected_mean_bias = bias;
        self.injected_sd_scale = (1.0 + bias * bias).sqrt();
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 3 {
            return Err(Error::invalid("window must be at least 3 days"));
        }
        if self.n_days <= self.window {
            return Err(Error::invalid("n_days must exceed the window"));
        }
        if !(self.noise_sd > 0.0) {
            return Err(Error::invalid("noise_sd must be positive"));
        }
        if !(self.injected_sd_scale > 0.0) {
            return Err(Error::invalid("injected_sd_scale must be positive"));
        }
        if !(0.0..1.0).contains(&self.noise_seasonality) {
            return Err(Error::invalid("noise_seasonality must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// The raw temperature series.
pub fn weather_series(config: &WeatherSimConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let z = Normal::new(0.0, 1.0).expect("unit normal");
    Ok((0..config.n_days)
        .map(|t| {
            let phase = 2.0 * std::f64::consts::PI * t as f64 / YEAR;
            let sd = config.noise_sd * (1.0 + config.noise_seasonality * phase.cos());
            config.mean_level + config.seasonal_amplitude * phase.sin() + sd * z.sample(&mut rng)
        })
        .collect())
}

/// One scalar-Gaussian record per day after the warm-up window.
pub fn run_weather_sim(config: &WeatherSimConfig) -> Result<Vec<PredictionRecord>> {
    let y = weather_series(config)?;
    let w = config.window;
    let wf = w as f64;
    // regressor centered on the window: τ − τ̄ for τ = 0..w
    let xbar = (wf - 1.0) / 2.0;
    let sxx = wf * (wf * wf - 1.0) / 12.0;
    let x0 = wf - xbar;
    let se_factor = if config.prediction_se { (1.0 + 1.0 / wf + x0 * x0 / sxx).sqrt() } else { 1.0 };
    (w..config.n_days)
        .map(|t| {
            let win = &y[t - w..t];
            let ybar = win.iter().sum::<f64>() / wf;
            let sxy: f64 = win.iter().enumerate().map(|(i, &v)| (i as f64 - xbar) * (v - ybar)).sum();
            let slope = sxy / sxx;
            let ssr: f64 = win
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let r = v - ybar - slope * (i as f64 - xbar);
                    r * r
                })
                .sum();
            let resid_sd = (ssr / (wf - 2.0)).sqrt();
            if !(resid_sd > 1e-12 * ybar.abs().max(1.0)) {
                return Err(Error::InvalidDistribution(format!("degenerate window ending at day {t}")));
            }
            let sigma_hat = resid_sd * se_factor;
            let mu = ybar + slope * x0 + config.injected_mean_bias * sigma_hat;
            Ok(PredictionRecord::gaussian(mu, sigma_hat * config.injected_sd_scale, y[t])?.with_time(t as i64))
        })
        .collect()
}
