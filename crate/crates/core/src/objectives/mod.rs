//! Training objectives: the base waveform + multi-resolution STFT loss and
//! the three phonetic settings.
//!
//! * regularization: `base + λ · L1(I(e_i(x) Q), sel(g(y)))` where `Q` is a
//!   fixed seeded orthonormal channel bridge and `I` linear interpolation
//!   to the feature frame count.
//! * supervision: `base + λ · L1(sel(g(ŷ)), sel(g(y)))`, differentiating
//!   through the frozen provider.
//! * conditioning: `base(y, f(x, sel(g(x))))`, non-causal models only.

mod stft_loss;

pub use stft_loss::{
    base_loss, base_loss_with, default_resolutions, log_magnitude_loss, spectral_convergence, BaseTerms,
    MultiResolutionStft, RESOLUTIONS,
};

use std::fmt;
use std::sync::Arc;

use candle_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::interpolate_time_tensor;
use crate::error::{config_err, Result};
use crate::linalg::random_orthonormal;
use crate::model::{Demucs, DemucsConfig, ParamStore};
use crate::phonetic::{LayerMode, LayerSelection, PhoneticProvider};
use crate::device;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    #[default]
    Base,
    Regularization,
    Supervision,
    Conditioning,
}

impl Setting {
    pub const ALL: [Setting; 4] = [Setting::Base, Setting::Regularization, Setting::Supervision, Setting::Conditioning];

    pub fn as_str(&self) -> &'static str {
        match self {
            Setting::Base => "base",
            Setting::Regularization => "regularization",
            Setting::Supervision => "supervision",
            Setting::Conditioning => "conditioning",
        }
    }

    pub fn uses_provider(&self) -> bool {
        *self != Setting::Base
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    #[default]
    L1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionSpec {
    #[serde(default)]
    pub setting: Setting,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Encoder tap for regularization; `None` means the deepest layer.
    #[serde(default)]
    pub tap_layer: Option<usize>,
    #[serde(default)]
    pub selection: LayerMode,
    #[serde(default)]
    pub distance: Distance,
    /// Seed of the fixed channel bridge used by regularization.
    #[serde(default)]
    pub bridge_seed: u64,
}

fn default_lambda() -> f64 {
    0.1
}

impl Default for InjectionSpec {
    fn default() -> Self {
        Self {
            setting: Setting::Base,
            lambda: default_lambda(),
            tap_layer: None,
            selection: LayerMode::default(),
            distance: Distance::L1,
            bridge_seed: 0,
        }
    }
}

impl InjectionSpec {
    pub fn new(setting: Setting) -> Self {
        Self {
            setting,
            ..Self::default()
        }
    }

    pub fn tap(&self, model: &DemucsConfig) -> usize {
        self.tap_layer.unwrap_or(model.depth)
    }

    /// Checks compatibility with a model geometry; runs before any training.
    pub fn validate(&self, model: &DemucsConfig) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return config_err(format!("lambda must be a nonnegative finite number, got {}", self.lambda));
        }
        if self.setting == Setting::Conditioning && model.causal {
            return config_err("conditioning requires non-causal setup");
        }
        if self.setting == Setting::Regularization && self.tap(model) > model.depth {
            return config_err(format!(
                "no dimension bridge for tap layer {}: the encoder has layers 0..={}",
                self.tap(model),
                model.depth
            ));
        }
        Ok(())
    }
}

/// Per-term values; the batch value of each term is its mean over items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub setting: Setting,
    /// `||y - ŷ||_1` (not yet divided by `samples`).
    pub l1_wave: f64,
    pub sc: Vec<f64>,
    pub mag: Vec<f64>,
    pub phonetic: f64,
    pub lambda: f64,
    pub samples: usize,
    pub total: f64,
}

impl LossBreakdown {
    pub(crate) fn assemble(
        setting: Setting,
        l1_wave: f64,
        sc: Vec<f64>,
        mag: Vec<f64>,
        phonetic: f64,
        lambda: f64,
        samples: usize,
    ) -> Self {
        let mut b = Self {
            setting,
            l1_wave,
            sc,
            mag,
            phonetic,
            lambda,
            samples,
            total: 0.0,
        };
        b.total = b.recombine();
        b
    }

    pub fn base_total(&self) -> f64 {
        let spectral: f64 = self.sc.iter().zip(&self.mag).map(|(s, m)| s + m).sum();
        (self.l1_wave + spectral) / self.samples as f64
    }

    /// Total rebuilt from the parts.
    pub fn recombine(&self) -> f64 {
        self.base_total() + self.lambda * self.phonetic
    }

    /// One JSON-lines record for the metrics log.
    pub fn log_record(&self, step: usize) -> serde_json::Value {
        serde_json::json!({
            "step": step,
            "setting": self.setting,
            "l1": self.l1_wave,
            "sc": self.sc,
            "mag": self.mag,
            "phonetic": self.phonetic,
            "total": self.total,
        })
    }
}

/// Differentiable loss plus its breakdown.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub total: Tensor,
    pub breakdown: LossBreakdown,
    pub estimate: Tensor,
}

/// Objective for one injection setting, owning the provider handle, layer
/// selection and the regularization bridge.
#[derive(Debug, Clone)]
pub struct Objective {
    spec: InjectionSpec,
    stft: MultiResolutionStft,
    provider: Option<Arc<dyn PhoneticProvider>>,
    selection: Option<LayerSelection>,
    /// (C_tap, d), regularization only.
    bridge: Option<Tensor>,
}

impl Objective {
    /// Learned selections register `selection.logits` in `store`.
    pub fn new(
        spec: &InjectionSpec,
        model: &DemucsConfig,
        provider: Option<Arc<dyn PhoneticProvider>>,
        store: &mut ParamStore,
    ) -> Result<Self> {
        spec.validate(model)?;
        let stft = MultiResolutionStft::default();
        if spec.setting == Setting::Base {
            return Ok(Self {
                spec: spec.clone(),
                stft,
                provider: None,
                selection: None,
                bridge: None,
            });
        }
        let Some(provider) = provider else {
            return config_err(format!("setting `{}` needs a phonetic provider", spec.setting));
        };
        if spec.setting == Setting::Supervision && !provider.differentiable() {
            return config_err(format!(
                "supervision back-propagates through the provider, but `{}` is not differentiable",
                provider.name()
            ));
        }
        let selection = LayerSelection::new(spec.selection, provider.num_layers(), Some(store))?;
        let bridge = if spec.setting == Setting::Regularization {
            let c = model.channels(spec.tap(model));
            let d = provider.feature_dim();
            let mut rng = ChaCha8Rng::seed_from_u64(spec.bridge_seed);
            Some(Tensor::from_vec(random_orthonormal(c, d, &mut rng), (c, d), &device())?)
        } else {
            None
        };
        Ok(Self {
            spec: spec.clone(),
            stft,
            provider: Some(provider),
            selection: Some(selection),
            bridge,
        })
    }

    pub fn spec(&self) -> &InjectionSpec {
        &self.spec
    }

    pub fn selection(&self) -> Option<&LayerSelection> {
        self.selection.as_ref()
    }

    pub fn provider(&self) -> Option<&Arc<dyn PhoneticProvider>> {
        self.provider.as_ref()
    }

    pub fn bridge(&self) -> Option<&Tensor> {
        self.bridge.as_ref()
    }

    /// Replaces the bridge, e.g. when restoring a checkpoint.
    pub fn set_bridge(&mut self, bridge: Tensor) -> Result<()> {
        match &self.bridge {
            Some(b) if b.dims() == bridge.dims() => {
                self.bridge = Some(bridge);
                Ok(())
            }
            _ => config_err("bridge shape does not match this objective"),
        }
    }

    /// Overrides λ, leaving everything else untouched.
    pub fn set_lambda(&mut self, lambda: f64) {
        self.spec.lambda = lambda;
    }

    fn provider_parts(&self) -> (&Arc<dyn PhoneticProvider>, &LayerSelection) {
        (
            self.provider.as_ref().expect("provider checked at construction"),
            self.selection.as_ref().expect("selection built with provider"),
        )
    }

    /// Selected, detached phonetic features of `wave` (B, T').
    pub fn target_features(&self, wave: &Tensor) -> Result<Tensor> {
        let (provider, selection) = self.provider_parts();
        let feats = provider.extract(&wave.detach())?;
        let detached = crate::phonetic::LayeredFeatures::new(feats.layers().iter().map(|l| l.detach()).collect())?;
        selection.select(&detached)
    }

    /// Conditioning input for a noisy batch.
    pub fn conditioning_features(&self, x: &Tensor) -> Result<Option<Tensor>> {
        if self.spec.setting != Setting::Conditioning {
            return Ok(None);
        }
        Ok(Some(self.target_features(x)?))
    }

    /// Phonetic regularization term for a tap (B, C, F) against target
    /// features (B, T', d).
    pub fn regularization_term(&self, tap: &Tensor, target: &Tensor) -> Result<Tensor> {
        let Some(bridge) = &self.bridge else {
            return config_err("no dimension bridge: objective is not in the regularization setting");
        };
        let (b, c, _) = tap.dims3()?;
        if c != bridge.dim(0)? {
            return config_err(format!("tap has {c} channels, bridge expects {}", bridge.dim(0)?));
        }
        let projected = tap
            .transpose(1, 2)?
            .contiguous()?
            .broadcast_matmul(&bridge.unsqueeze(0)?.broadcast_as((b, c, bridge.dim(1)?))?.contiguous()?)?;
        let aligned = interpolate_time_tensor(&projected, target.dim(1)?)?;
        l1_mean(&aligned, target)
    }

    /// Full differentiable objective for a batch x, y: (B, T).
    pub fn compute(&self, model: &Demucs, x: &Tensor, y: &Tensor) -> Result<LossOutput> {
        let cond = self.conditioning_features(x)?;
        let out = model.forward(x, cond.as_ref())?;
        let base = self.stft.base(y, &out.output)?;
        let (phonetic, term) = match self.spec.setting {
            Setting::Base | Setting::Conditioning => (0.0, None),
            Setting::Regularization => {
                let tap = &out.taps[self.spec.tap(model.config())];
                let t = self.regularization_term(tap, &self.target_features(y)?)?;
                (t.to_scalar::<f64>()?, Some(t))
            }
            Setting::Supervision => {
                let (provider, selection) = self.provider_parts();
                let est = selection.select(&provider.extract(&out.output)?)?;
                let t = l1_mean(&est, &self.target_features(y)?)?;
                (t.to_scalar::<f64>()?, Some(t))
            }
        };
        let lambda = match self.spec.setting {
            Setting::Regularization | Setting::Supervision => self.spec.lambda,
            _ => 0.0,
        };
        let total = match term {
            Some(t) if lambda != 0.0 => (&base.total + (t * lambda)?)?,
            _ => base.total.clone(),
        };
        let breakdown = LossBreakdown::assemble(
            self.spec.setting,
            base.l1,
            base.sc,
            base.mag,
            phonetic,
            lambda,
            base.samples,
        );
        Ok(LossOutput {
            total,
            breakdown,
            estimate: out.output,
        })
    }
}

fn l1_mean(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return config_err(format!("feature shapes differ: {:?} vs {:?}", a.dims(), b.dims()));
    }
    Ok((a - b)?.abs()?.mean_all()?)
}
