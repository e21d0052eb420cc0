//! Configuration-driven experiments over the `stno` simulator: TOML
//! configs with unit-suffixed values, sweep and Monte Carlo runners, and
//! seed-stamped CSV / JSON output.

pub mod config;
pub mod error;
pub mod experiments;
pub mod record;
pub mod units;

pub use config::{load_config, parse_config, Axis, ExperimentConfig, ExperimentKind};
pub use error::{ConfigError, HarnessError};
pub use experiments::run_experiment;
pub use record::{write_run, RunOutput, RunRecord};
