use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{PhoneticProvider, ToyProvider, ToyProviderConfig};
use crate::error::{config_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Toy,
    External,
}

/// One provider declaration. `num_layers` counts every exposed layer
/// including layer 0; an ASR encoder exposes a single layer selected by
/// `encoder_tap`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderEntry {
    pub kind: ProviderKind,
    #[serde(default)]
    pub artifact_path: Option<PathBuf>,
    #[serde(default = "default_rate")]
    pub sample_rate: u32,
    pub num_layers: usize,
    pub dim: usize,
    #[serde(default = "default_frame_rate")]
    pub frame_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub encoder_tap: Option<usize>,
}

fn default_rate() -> u32 {
    16_000
}
fn default_frame_rate() -> f64 {
    50.0
}

impl ProviderEntry {
    pub fn toy(cfg: &ToyProviderConfig) -> Self {
        Self {
            kind: ProviderKind::Toy,
            artifact_path: None,
            sample_rate: cfg.sample_rate,
            num_layers: cfg.hidden_layers + 1,
            dim: cfg.dim,
            frame_rate: cfg.frame_rate,
            seed: cfg.seed,
            encoder_tap: None,
        }
    }

    pub fn build(&self, name: &str) -> Result<Arc<dyn PhoneticProvider>> {
        match self.kind {
            ProviderKind::Toy => {
                if self.num_layers == 0 {
                    return config_err("toy provider needs at least one layer");
                }
                let cfg = ToyProviderConfig {
                    hidden_layers: self.num_layers - 1,
                    dim: self.dim,
                    sample_rate: self.sample_rate,
                    frame_rate: self.frame_rate,
                    seed: self.seed,
                };
                Ok(Arc::new(ToyProvider::new(&cfg)?))
            }
            ProviderKind::External => {
                let message = match &self.artifact_path {
                    Some(p) if !p.exists() => format!("artifact {} not found", p.display()),
                    Some(p) => format!("no adapter is compiled in for artifact {}", p.display()),
                    None => "no artifact_path configured".to_string(),
                };
                Err(Error::Provider {
                    provider: name.to_string(),
                    message,
                    hint: "pretrained encoders are not bundled; implement PhoneticProvider for the \
                           model or register a `toy` provider for desk-scale runs"
                        .to_string(),
                })
            }
        }
    }
}

/// Provider name -> declaration, loaded from TOML or JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProviderRegistry {
    #[serde(flatten)]
    pub providers: BTreeMap<String, ProviderEntry>,
}

impl ProviderRegistry {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Ok(serde_json::from_str(&text)?)
        } else {
            Ok(toml::from_str(&text)?)
        }
    }

    pub fn get(&self, name: &str) -> Result<&ProviderEntry> {
        self.providers
            .get(name)
            .ok_or_else(|| Error::Config(format!("provider `{name}` is not registered")))
    }

    pub fn build(&self, name: &str) -> Result<Arc<dyn PhoneticProvider>> {
        self.get(name)?.build(name)
    }
}
