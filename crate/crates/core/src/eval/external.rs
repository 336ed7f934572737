//! Executable adapters for metrics that are not computed in-process.
//!
//! An adapter is any program that takes the reference and estimate WAV
//! paths as its last two arguments and prints one float on stdout.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use super::MetricName;
use crate::error::{arg_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalAdapter {
    pub command: PathBuf,
    /// Inserted before the two paths.
    #[serde(default)]
    pub args: Vec<String>,
}

impl ExternalAdapter {
    pub fn new(command: impl Into<PathBuf>) -> Self {
        Self {
            command: command.into(),
            args: Vec::new(),
        }
    }

    pub fn run(&self, reference: &Path, estimate: &Path) -> Result<f64> {
        let out = Command::new(&self.command)
            .args(&self.args)
            .arg(reference)
            .arg(estimate)
            .output()
            .map_err(|e| Error::Argument(format!("cannot run {}: {e}", self.command.display())))?;
        if !out.status.success() {
            return arg_err(format!(
                "{} exited with {}: {}",
                self.command.display(),
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            ));
        }
        let text = String::from_utf8_lossy(&out.stdout);
        let line = text.split_whitespace().next().unwrap_or("");
        line.parse::<f64>().map_err(|_| {
            Error::Argument(format!(
                "{} printed `{}`, expected a single number",
                self.command.display(),
                text.trim()
            ))
        })
    }
}

/// Metric name to adapter, usually loaded from a TOML table such as
/// `[PESQ] command = "/opt/bin/pesq-wb"`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdapterRegistry {
    #[serde(flatten)]
    pub adapters: BTreeMap<MetricName, ExternalAdapter>,
}

impl AdapterRegistry {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            Ok(serde_json::from_str(&text)?)
        } else {
            Ok(toml::from_str(&text)?)
        }
    }

    pub fn register(&mut self, metric: MetricName, adapter: ExternalAdapter) {
        self.adapters.insert(metric, adapter);
    }

    pub fn get(&self, metric: MetricName) -> Option<&ExternalAdapter> {
        self.adapters.get(&metric)
    }
}
