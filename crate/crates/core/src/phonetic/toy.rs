use candle_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LayeredFeatures, PhoneticProvider};
use crate::audio::mel::filterbank;
use crate::audio::spectral::SpectralFrontend;
use crate::audio::StftConfig;
use crate::error::{config_err, Result};
use crate::linalg::random_orthonormal;
use crate::device;

/// Deterministic stand-in for a pretrained speech encoder.
///
/// Layer 0 is `ln(1 + mel power)` over `dim` bands at `frame_rate`; layer
/// `j` is `tanh(layer_{j-1} Q_j)` with a seeded random orthogonal `Q_j`.
/// Silence maps to all-zero features in every layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyProviderConfig {
    /// Hidden layers above layer 0 (the provider exposes this + 1).
    #[serde(default = "default_hidden_layers")]
    pub hidden_layers: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_rate")]
    pub sample_rate: u32,
    #[serde(default = "default_frame_rate")]
    pub frame_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_hidden_layers() -> usize {
    12
}
fn default_dim() -> usize {
    16
}
fn default_rate() -> u32 {
    16_000
}
fn default_frame_rate() -> f64 {
    50.0
}

impl Default for ToyProviderConfig {
    fn default() -> Self {
        Self {
            hidden_layers: default_hidden_layers(),
            dim: default_dim(),
            sample_rate: default_rate(),
            frame_rate: default_frame_rate(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyProvider {
    cfg: ToyProviderConfig,
    frontend: SpectralFrontend,
    /// (bins, dim)
    mel: Tensor,
    /// (dim, dim) per hidden layer.
    mixing: Vec<Tensor>,
}

impl ToyProvider {
    pub fn new(cfg: &ToyProviderConfig) -> Result<Self> {
        if cfg.dim == 0 || cfg.sample_rate == 0 || !(cfg.frame_rate > 0.0) {
            return config_err("toy provider needs positive dim, sample rate and frame rate");
        }
        let hop = (cfg.sample_rate as f64 / cfg.frame_rate).round() as usize;
        if hop == 0 {
            return config_err("frame rate exceeds sample rate");
        }
        let win = hop + hop / 4;
        let n_fft = win.next_power_of_two();
        let stft = StftConfig::new(n_fft, hop, win)?;
        let bins = stft.num_bins();
        let fb = filterbank(n_fft, cfg.sample_rate, cfg.dim, 0.0, cfg.sample_rate as f64 / 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let dev = device();
        let mixing = (0..cfg.hidden_layers)
            .map(|_| Tensor::from_vec(random_orthonormal(cfg.dim, cfg.dim, &mut rng), (cfg.dim, cfg.dim), &dev))
            .collect::<candle_core::Result<Vec<_>>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            frontend: SpectralFrontend::uncentered(&stft)?,
            mel: Tensor::from_vec(fb, (bins, cfg.dim), &dev)?,
            mixing,
        })
    }

    pub fn config(&self) -> &ToyProviderConfig {
        &self.cfg
    }
}

impl PhoneticProvider for ToyProvider {
    fn name(&self) -> &str {
        "toy"
    }

    fn num_layers(&self) -> usize {
        self.cfg.hidden_layers + 1
    }

    fn feature_dim(&self) -> usize {
        self.cfg.dim
    }

    fn frame_rate(&self) -> f64 {
        self.cfg.frame_rate
    }

    fn sample_rate(&self) -> u32 {
        self.cfg.sample_rate
    }

    fn differentiable(&self) -> bool {
        true
    }

    fn num_frames(&self, samples: usize) -> usize {
        self.frontend.num_frames(samples)
    }

    fn extract(&self, wave: &Tensor) -> Result<LayeredFeatures> {
        let power = self.frontend.power(wave)?;
        let mut h = (power.broadcast_matmul(&self.mel)? + 1.0)?.log()?;
        let mut layers = Vec::with_capacity(self.num_layers());
        layers.push(h.clone());
        for q in &self.mixing {
            h = h.broadcast_matmul(q)?.tanh()?;
            layers.push(h.clone());
        }
        LayeredFeatures::new(layers)
    }

    fn parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![("mel".to_string(), self.mel.clone())];
        out.extend(self.mixing.iter().enumerate().map(|(i, q)| (format!("mixing.{i}"), q.clone())));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::Waveform;
    use crate::phonetic::extract;

    fn probe(len: usize) -> Waveform {
        let s = (0..len).map(|i| (i as f64 * 0.031).sin() * 0.4 + (i as f64 * 0.2).cos() * 0.1).collect();
        Waveform::new(s, 16_000).unwrap()
    }

    #[test]
    fn one_second_gives_fifty_frames() {
        let p = ToyProvider::new(&ToyProviderConfig::default()).unwrap();
        let f = extract(&p, &probe(16_000)).unwrap();
        assert_eq!(f.num_layers(), 13);
        assert_eq!(f.frames(), 50);
        assert_eq!(f.dim(), 16);
    }

    #[test]
    fn same_seed_same_features() {
        let cfg = ToyProviderConfig { hidden_layers: 3, dim: 8, ..Default::default() };
        let a = extract(&ToyProvider::new(&cfg).unwrap(), &probe(4000)).unwrap();
        let b = extract(&ToyProvider::new(&cfg).unwrap(), &probe(4000)).unwrap();
        for (x, y) in a.layers().iter().zip(b.layers()) {
            assert_eq!(x.flatten_all().unwrap().to_vec1::<f64>().unwrap(), y.flatten_all().unwrap().to_vec1::<f64>().unwrap());
        }
    }

    #[test]
    fn silence_maps_to_zero() {
        let p = ToyProvider::new(&ToyProviderConfig::default()).unwrap();
        let f = extract(&p, &Waveform::zeros(8000, 16_000).unwrap()).unwrap();
        for layer in f.layers() {
            assert!(layer.flatten_all().unwrap().to_vec1::<f64>().unwrap().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn wrong_rate_rejected() {
        let p = ToyProvider::new(&ToyProviderConfig::default()).unwrap();
        let w = Waveform::new(vec![0.1; 800], 8000).unwrap();
        assert!(extract(&p, &w).is_err());
    }
}
