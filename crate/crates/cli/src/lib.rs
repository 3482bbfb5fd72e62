//! Scenario-driven front end for `hardy-core`: parse a flat config, run a
//! pipeline, persist fields, reports and a manifest.

pub mod config;
pub mod run;

pub use config::{parse_config, parse_config_str, Check, ConfigErrors, Pipeline, ScenarioConfig};
pub use run::{render_manifest, run, RunManifest, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_CONSTRUCTION, EXIT_PASS};
