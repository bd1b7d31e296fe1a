//! Scenario runner for the obstacle laboratory: config parsing, the run
//! pipeline, packaged demos and plot-data conversion.

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod demos;
pub mod plot;
pub mod run;

use std::path::Path;

use config::{ConfigError, ScenarioConfig};
use run::{run_scenario, RunError, RunOutcome};

/// Loads a config from a path or `demo:NAME` and returns it with its
/// source label.
pub fn load(spec: &str) -> Result<(ScenarioConfig, String), RunError> {
    if let Some(name) = spec.strip_prefix("demo:") {
        let demo = demos::find(name).ok_or_else(|| {
            ConfigError::new(spec, format!("unknown demo (available: {})", demos::names().join(", ")))
        })?;
        let cfg = ScenarioConfig::from_toml(demo.source, spec)?;
        return Ok((cfg, format!("demo:{}", demo.name)));
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(RunError::Io {
            path: path.into(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "config file not found"),
        });
    }
    Ok((ScenarioConfig::load(path)?, spec.to_string()))
}

/// Loads and runs one scenario.
pub fn run_one(spec: &str, out_root: &Path) -> Result<RunOutcome, RunError> {
    let (cfg, source) = load(spec)?;
    run_scenario(&cfg, &source, out_root)
}
