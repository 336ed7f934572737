use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::augment::AugmentConfig;
use crate::error::{config_err, Error, Result};
use crate::model::DemucsConfig;
use crate::objectives::InjectionSpec;
use crate::phonetic::{PhoneticProvider, ProviderRegistry, ToyProvider, ToyProviderConfig};

/// Prefix of environment variables that override config keys; nested keys
/// are joined with `__`, e.g. `PHASE_FORGE_OPTIMIZER__LR=1e-3`.
pub const ENV_PREFIX: &str = "PHASE_FORGE_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub eps: f64,
    /// Decay the step size linearly to zero over this many steps. Off by
    /// default.
    #[serde(default)]
    pub decay_steps: Option<u64>,
    /// Rescale the gradient when its global L2 norm exceeds this. Off by
    /// default.
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
}

fn default_lr() -> f64 {
    3e-4
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
            decay_steps: None,
            max_grad_norm: None,
        }
    }
}

/// Which phonetic provider to build: a named entry of a registry file, or
/// the built-in toy provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    #[serde(default = "default_provider_name")]
    pub name: String,
    #[serde(default)]
    pub registry: Option<PathBuf>,
    #[serde(default)]
    pub toy: ToyProviderConfig,
}

fn default_provider_name() -> String {
    "toy".to_string()
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            name: default_provider_name(),
            registry: None,
            toy: ToyProviderConfig::default(),
        }
    }
}

impl ProviderConfig {
    pub fn build(&self) -> Result<Arc<dyn PhoneticProvider>> {
        match &self.registry {
            Some(path) => ProviderRegistry::load(path)?.build(&self.name),
            None if self.name == "toy" => Ok(Arc::new(ToyProvider::new(&self.toy)?)),
            None => Err(Error::Provider {
                provider: self.name.clone(),
                message: "no registry file configured".into(),
                hint: "set provider.registry to a TOML/JSON registry declaring this provider".into(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default = "default_segment")]
    pub segment_s: f64,
    #[serde(default = "default_stride")]
    pub stride_s: f64,
    #[serde(default = "default_rate")]
    pub sample_rate: u32,
}

fn default_segment() -> f64 {
    4.5
}
fn default_stride() -> f64 {
    0.5
}
fn default_rate() -> u32 {
    16_000
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            augment: AugmentConfig::default(),
            segment_s: default_segment(),
            stride_s: default_stride(),
            sample_rate: default_rate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub injection: InjectionSpec,
    #[serde(default)]
    pub model: DemucsConfig,
    #[serde(default)]
    pub provider: ProviderConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

fn default_batch() -> usize {
    16
}
fn default_epochs() -> usize {
    300
}
fn default_out() -> PathBuf {
    PathBuf::from("runs/default")
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: default_batch(),
            optimizer: AdamConfig::default(),
            epochs: default_epochs(),
            seed: 0,
            injection: InjectionSpec::default(),
            model: DemucsConfig::default(),
            provider: ProviderConfig::default(),
            data: DataConfig::default(),
            out_dir: default_out(),
        }
    }
}

impl TrainConfig {
    /// TOML unless the extension is `.json`.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            Ok(serde_json::from_str(&text)?)
        } else {
            Ok(toml::from_str(&text)?)
        }
    }

    /// Reads `path` (or defaults) and applies `PHASE_FORGE_*` overrides.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg = match path {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        cfg.with_overrides(std::env::vars())
    }

    /// Applies `PREFIX_KEY__SUBKEY=value` pairs; values parse as JSON and
    /// fall back to plain strings.
    pub fn with_overrides(&self, vars: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut root = serde_json::to_value(self)?;
        let mut touched = false;
        for (key, raw) in vars {
            let Some(rest) = key.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let path: Vec<String> = rest.split("__").map(str::to_lowercase).collect();
            let value = serde_json::from_str(&raw).unwrap_or(Value::String(raw.clone()));
            set_path(&mut root, &path, value).map_err(|e| Error::Config(format!("{key}: {e}")))?;
            touched = true;
        }
        if !touched {
            return Ok(self.clone());
        }
        serde_json::from_value(root).map_err(|e| Error::Config(format!("invalid override: {e}")))
    }

    /// Everything that can be checked before touching data.
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return config_err("batch_size must be at least 1");
        }
        if !(self.optimizer.lr > 0.0) {
            return config_err(format!("learning rate must be positive, got {}", self.optimizer.lr));
        }
        if self.optimizer.decay_steps == Some(0) {
            return config_err("decay_steps must be at least 1");
        }
        if let Some(c) = self.optimizer.max_grad_norm {
            if !(c > 0.0) || !c.is_finite() {
                return config_err(format!("max_grad_norm must be positive, got {c}"));
            }
        }
        self.model.validate()?;
        self.injection.validate(&self.model)?;
        self.data.augment.validate()?;
        Ok(())
    }
}

fn set_path(root: &mut Value, path: &[String], value: Value) -> std::result::Result<(), String> {
    let (last, parents) = path.split_last().ok_or("empty key")?;
    let mut node = root;
    for p in parents {
        let obj = node.as_object_mut().ok_or(format!("`{p}` is not a table"))?;
        node = obj.entry(p.clone()).or_insert_with(|| Value::Object(Default::default()));
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
    }
    node.as_object_mut()
        .ok_or(format!("cannot set `{last}` on a non-table"))?
        .insert(last.clone(), value);
    Ok(())
}
