//! Frozen phonetic feature providers and layer selection.
//!
//! A provider maps a waveform to one feature sequence per hidden layer.
//! Provider weights are plain tensors rather than variables, so no
//! optimizer can reach them and gradients stop at their boundary; the
//! toy provider stays differentiable with respect to its input waveform.

mod registry;
mod selection;
mod toy;

pub use registry::{ProviderEntry, ProviderKind, ProviderRegistry};
pub use selection::{
    layer_weights_csv, layer_weights_svg, report_layer_weights, LayerMode, LayerSelection, LayerWeight, LOGITS_PARAM,
};
pub use toy::{ToyProvider, ToyProviderConfig};

use candle_core::Tensor;

use crate::audio::Waveform;
use crate::error::{arg_err, Result};

pub trait PhoneticProvider: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &str;
    /// Number of exposed layers, counting layer 0.
    fn num_layers(&self) -> usize;
    fn feature_dim(&self) -> usize;
    fn frame_rate(&self) -> f64;
    fn sample_rate(&self) -> u32;
    /// Whether gradients flow from the features back to the input waveform.
    fn differentiable(&self) -> bool;
    fn num_frames(&self, samples: usize) -> usize;
    /// wave: (B, T) at `sample_rate()`.
    fn extract(&self, wave: &Tensor) -> Result<LayeredFeatures>;
    /// Frozen weights, exposed for frozenness checks.
    fn parameters(&self) -> Vec<(String, Tensor)>;
}

/// One (B, T', d) tensor per provider layer.
#[derive(Debug, Clone)]
pub struct LayeredFeatures {
    layers: Vec<Tensor>,
}

impl LayeredFeatures {
    pub fn new(layers: Vec<Tensor>) -> Result<Self> {
        let Some(first) = layers.first() else {
            return arg_err("provider returned no layers");
        };
        let dims = first.dims().to_vec();
        if dims.len() != 3 || layers.iter().any(|l| l.dims() != dims.as_slice()) {
            return arg_err("all layers must share one (batch, frames, dim) shape");
        }
        Ok(Self { layers })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, i: usize) -> Option<&Tensor> {
        self.layers.get(i)
    }

    pub fn layers(&self) -> &[Tensor] {
        &self.layers
    }

    pub fn frames(&self) -> usize {
        self.layers[0].dims()[1]
    }

    pub fn dim(&self) -> usize {
        self.layers[0].dims()[2]
    }
}

/// Extracts features for a single waveform, checking its sample rate.
pub fn extract(provider: &dyn PhoneticProvider, wave: &Waveform) -> Result<LayeredFeatures> {
    if wave.sample_rate() != provider.sample_rate() {
        return arg_err(format!(
            "provider `{}` expects {} Hz audio, got {} Hz",
            provider.name(),
            provider.sample_rate(),
            wave.sample_rate()
        ));
    }
    provider.extract(&crate::audio::spectral::to_batch(wave.samples())?)
}
