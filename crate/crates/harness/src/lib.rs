//! Experiment harness for `decoy-core`: config files, distance sweeps and
//! CSV/JSON reports, plus the `decoy-qkd` command line.

pub mod cli;
pub mod config;
pub mod experiment;
pub mod report;

pub use config::{load_config, ExperimentSpec};
pub use experiment::run_experiment;
pub use report::emit_report;
