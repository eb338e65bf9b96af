//! Scenario files, CSV output, the acceptance suite and the command-line front end for
//! `isodroop-core`.

pub mod acceptance;
pub mod cli;
pub mod config;
pub mod output;
pub mod scenarios;

pub use config::{emit_config, parse_config, parse_with_overrides, ConfigError, ScenarioFile, SweepSpec};
