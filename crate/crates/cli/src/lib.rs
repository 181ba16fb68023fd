//! Batch driver for the `gengeom` check suites.

pub mod config;
pub mod report;
pub mod suites;

pub use config::{ConfigError, RunConfig, SuiteName};
pub use report::{CheckLine, SuiteReport};
pub use suites::{run_suites, Runner};
