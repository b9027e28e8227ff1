//! Command-line front-end: configuration, orchestration, and reporting
//! for the design-space exploration engine.

pub mod config;
pub mod export;
pub mod problems;
pub mod report;
pub mod run;

pub use config::{load_config, Mode, RunConfig};
pub use run::{run, RunOutcome, RunStatus};
