//! Data generators for the two worked experiments and the drift sweep.

mod robot;
mod sweep;
mod weather;

pub use robot::{run_robot_sim, EmittedCloud, RobotRun, RobotSimConfig};
pub use sweep::{drift_sweep, monitor_robot_run, EnvelopeRow, MultiplierSummary, SeedRun, SweepReport};
pub use weather::{run_weather_sim, weather_series, WeatherSimConfig};
