//! Scenario runner for the buyer's superhedging price: reads a TOML scenario,
//! solves it, runs the enabled checks and writes JSON and CSV reports.

pub mod config;
pub mod error;
pub mod oracle;
pub mod run;
pub mod study;

pub use config::{Format, Overrides, ScenarioConfig};
pub use error::CliError;
pub use run::{run_scenario, Outcome, Summary};
pub use study::{convergence_study, StudyReport};
