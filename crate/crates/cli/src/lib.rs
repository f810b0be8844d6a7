//! Config parsing and experiment running behind the `ddrl` binary.

pub mod config;
pub mod experiment;

pub use config::{parse_config, parse_config_str, ConfigError, ExperimentSpec, RunSpec};
pub use experiment::{run_experiment, ExperimentSummary};
