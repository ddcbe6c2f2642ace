//! Experiment configs as TOML files.

use std::path::Path;

use anyhow::Context;
use eccl_core::ExperimentConfig;

use crate::UsageError;

/// Reads and validates `path`, or returns the defaults when no path is given.
pub fn load(path: Option<&Path>) -> anyhow::Result<ExperimentConfig> {
    let cfg = match path {
        None => ExperimentConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            parse(&text).map_err(|e| UsageError(format!("{}: {e}", p.display())))?
        }
    };
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(cfg)
}

pub fn parse(text: &str) -> Result<ExperimentConfig, toml::de::Error> {
    toml::from_str(text)
}

pub fn to_toml(cfg: &ExperimentConfig) -> anyhow::Result<String> {
    toml::to_string(cfg).context("serializing config")
}
