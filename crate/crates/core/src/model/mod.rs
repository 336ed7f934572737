//! The waveform U-Net enhancer.

mod causality;
mod demucs;
mod layers;
pub mod params;

pub use causality::{causality_probe, lookahead_budget};
pub use demucs::{Demucs, ForwardOutput};
pub use params::{NamedArray, ParamStore};

use serde::{Deserialize, Serialize};

use crate::audio::RESAMPLE_ZEROS;
use crate::error::{config_err, Result};

/// Architecture geometry of the enhancer.
///
/// Encoder layer `i` (1-based) has `min(hidden * 2^(i-1), 8 * hidden)`
/// channels. Every layer is a strided convolution, ReLU, and a pointwise
/// convolution emitting twice the channels into a GLU. The decoder mirrors
/// it with transposed convolutions and additive skip connections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemucsConfig {
    pub hidden: usize,
    pub upscale: usize,
    pub stride: usize,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default)]
    pub causal: bool,
    #[serde(default = "default_lstm_layers")]
    pub lstm_layers: usize,
    /// Divide the input by its standard deviation and restore the scale on
    /// output. Only applied to non-causal models: a whole-utterance
    /// statistic would leak future samples into past outputs.
    #[serde(default = "default_true")]
    pub normalize: bool,
    /// Target weight std for the initial conv rescaling; 0 disables it.
    #[serde(default = "default_rescale")]
    pub rescale: f64,
}

fn default_kernel() -> usize {
    8
}
fn default_depth() -> usize {
    5
}
fn default_lstm_layers() -> usize {
    2
}
fn default_true() -> bool {
    true
}
fn default_rescale() -> f64 {
    0.1
}

pub const NORMALIZE_FLOOR: f64 = 1e-3;

impl Default for DemucsConfig {
    fn default() -> Self {
        Self {
            hidden: 48,
            upscale: 4,
            stride: 4,
            kernel: 8,
            depth: 5,
            causal: false,
            lstm_layers: 2,
            normalize: true,
            rescale: 0.1,
        }
    }
}

impl DemucsConfig {
    /// H=4, depth=2, U=1, S=2 geometry used by the gradient and shape checks.
    pub fn tiny() -> Self {
        Self {
            hidden: 4,
            upscale: 1,
            stride: 2,
            depth: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.depth == 0 || self.upscale == 0 || self.lstm_layers == 0 {
            return config_err("hidden, depth, upscale and lstm_layers must be positive");
        }
        if self.stride == 0 || self.kernel < self.stride {
            return config_err(format!(
                "need kernel >= stride >= 1 (kernel {}, stride {})",
                self.kernel, self.stride
            ));
        }
        Ok(())
    }

    /// Channels at level `i`; level 0 is the mono waveform.
    pub fn channels(&self, level: usize) -> usize {
        if level == 0 {
            1
        } else {
            (self.hidden << (level - 1).min(3)).min(8 * self.hidden)
        }
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.channels(self.depth)
    }

    /// Zero padding (left, right) around each encoder convolution.
    pub fn conv_padding(&self) -> (usize, usize) {
        let total = self.kernel - self.stride;
        if self.causal {
            (total, 0)
        } else {
            (total / 2, total - total / 2)
        }
    }

    pub fn total_stride(&self) -> usize {
        self.stride.pow(self.depth as u32)
    }

    /// Smallest length `>= len` whose upsampled length divides evenly through
    /// every strided layer, so decoder output lines up with the input.
    pub fn valid_length(&self, len: usize) -> usize {
        let total = self.total_stride();
        let q = total / gcd(total, self.upscale);
        len.max(1).div_ceil(q) * q
    }

    /// Frame counts of taps e_0..e_depth for an input of `len` samples.
    pub fn tap_frames(&self, len: usize) -> Vec<usize> {
        let (pl, pr) = self.conv_padding();
        let mut l = self.valid_length(len) * self.upscale;
        let mut out = vec![l];
        for _ in 0..self.depth {
            l = (l + pl + pr - self.kernel) / self.stride + 1;
            out.push(l);
        }
        out
    }

    /// Closed-form number of trainable scalars; `cond_dim` adds the
    /// conditioning projection.
    pub fn parameter_count(&self, cond_dim: Option<usize>) -> usize {
        let k = self.kernel;
        let mut n = 0;
        for i in 1..=self.depth {
            let (ci, co) = (self.channels(i - 1), self.channels(i));
            n += ci * co * k + co + co * 2 * co + 2 * co; // encoder
            n += co * 2 * co + 2 * co + co * ci * k + ci; // decoder
        }
        let c = self.bottleneck_channels();
        let dirs = if self.causal { 1 } else { 2 };
        for l in 0..self.lstm_layers {
            let input = if l == 0 { c } else { c * dirs };
            n += dirs * (4 * c * input + 4 * c * c + 8 * c);
        }
        if !self.causal {
            n += 2 * c * c + c;
        }
        if let Some(d) = cond_dim {
            n += (c + d) * c + c;
        }
        n
    }

    /// Samples of future input that may influence a causal model's output.
    pub fn lookahead(&self) -> usize {
        lookahead_budget(self)
    }
}

pub(crate) fn resample_lookahead(upscale: usize) -> usize {
    if upscale > 1 {
        2 * RESAMPLE_ZEROS
    } else {
        0
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Pushes a length through the padding/stride arithmetic and checks
    /// that every stage divides exactly and the decoder returns the length.
    fn simulate_ok(cfg: &DemucsConfig, len: usize) -> bool {
        let (pl, pr) = cfg.conv_padding();
        let mut l = len * cfg.upscale;
        let mut stack = vec![];
        for _ in 0..cfg.depth {
            let padded = l + pl + pr;
            if padded < cfg.kernel || (padded - cfg.kernel) % cfg.stride != 0 {
                return false;
            }
            stack.push(l);
            l = (padded - cfg.kernel) / cfg.stride + 1;
        }
        while let Some(prev) = stack.pop() {
            let out = (l - 1) * cfg.stride + cfg.kernel - (pl + pr);
            if out != prev {
                return false;
            }
            l = out;
        }
        l == len * cfg.upscale
    }

    fn oracle_valid_length(cfg: &DemucsConfig, len: usize) -> usize {
        (len..).find(|&t| simulate_ok(cfg, t)).unwrap()
    }

    #[test]
    fn valid_length_matches_simulation() {
        let cfg = DemucsConfig::default();
        assert_eq!(cfg.valid_length(16_000), oracle_valid_length(&cfg, 16_000));
        assert_eq!(cfg.valid_length(16_000), 16_128);
        for cfg in [
            DemucsConfig::tiny(),
            DemucsConfig { upscale: 2, stride: 2, causal: true, ..DemucsConfig::default() },
            DemucsConfig { stride: 3, kernel: 7, upscale: 2, depth: 3, ..DemucsConfig::default() },
        ] {
            for len in [1, 7, 511, 512, 1000, 4097] {
                assert_eq!(cfg.valid_length(len), oracle_valid_length(&cfg, len), "{cfg:?} {len}");
            }
        }
    }

    #[test]
    fn valid_length_fixed_point_and_idempotent() {
        let cfg = DemucsConfig::default();
        let v = cfg.valid_length(12_345);
        assert_eq!(cfg.valid_length(v), v);
        let mut prev = 0;
        for t in 1..3000 {
            let v = cfg.valid_length(t);
            assert!(v >= t && v >= prev);
            prev = v;
        }
    }

    #[test]
    fn channel_progression_caps_at_8h() {
        let cfg = DemucsConfig::default();
        let ch: Vec<usize> = (0..=5).map(|i| cfg.channels(i)).collect();
        assert_eq!(ch, vec![1, 48, 96, 192, 384, 384]);
    }

    #[test]
    fn parameter_count_hand_sum_tiny() {
        // H=4, depth=2, K=8, bidirectional 2-layer LSTM on 8 channels.
        let enc1 = 1 * 4 * 8 + 4 + 4 * 8 + 8;
        let enc2 = 4 * 8 * 8 + 8 + 8 * 16 + 16;
        let dec2 = 8 * 16 + 16 + 8 * 4 * 8 + 4;
        let dec1 = 4 * 8 + 8 + 4 * 1 * 8 + 1;
        let lstm_l0 = 2 * (4 * 8 * 8 + 4 * 8 * 8 + 8 * 8);
        let lstm_l1 = 2 * (4 * 8 * 16 + 4 * 8 * 8 + 8 * 8);
        let linear = 16 * 8 + 8;
        let total = enc1 + enc2 + dec2 + dec1 + lstm_l0 + lstm_l1 + linear;
        assert_eq!(DemucsConfig::tiny().parameter_count(None), total);
    }

    #[test]
    fn parameter_count_superlinear_in_hidden() {
        let a = DemucsConfig::default();
        let b = DemucsConfig { hidden: 96, ..a.clone() };
        assert_eq!(a.parameter_count(None), a.parameter_count(None));
        assert!(b.parameter_count(None) > 2 * a.parameter_count(None));
    }

    #[test]
    fn invalid_geometry_rejected() {
        assert!(DemucsConfig { kernel: 2, stride: 4, ..DemucsConfig::default() }.validate().is_err());
        assert!(DemucsConfig { depth: 0, ..DemucsConfig::default() }.validate().is_err());
    }
}
