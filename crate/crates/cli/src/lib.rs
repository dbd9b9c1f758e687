//! Scenario configs, experiment orchestration and reports for `torlink`.

pub mod config;
pub mod experiments;
pub mod expr;
pub mod run;
pub mod scenarios;

pub use config::{ConfigError, ScenarioConfig};
pub use run::{run, RunOptions, RunReport};
