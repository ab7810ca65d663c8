//! Declarative experiment runner for `stomix-core`: config schema,
//! deterministic CSV/JSON artifacts and run manifests.

pub mod config;
pub mod output;
pub mod run;

pub use config::{emit_config, parse_config, ConfigError, Experiment, ExperimentConfig};
pub use output::RunManifest;
pub use run::{run_experiment, RunError};
