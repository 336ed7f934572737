use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{config_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    #[default]
    Hann,
    Rectangular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub win_length: usize,
    #[serde(default)]
    pub window: WindowKind,
    /// Magnitude floor applied before taking logs.
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_eps() -> f64 {
    1e-7
}

impl StftConfig {
    pub fn new(n_fft: usize, hop: usize, win_length: usize) -> Result<Self> {
        let cfg = Self {
            n_fft,
            hop,
            win_length,
            window: WindowKind::Hann,
            eps: default_eps(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_window(mut self, window: WindowKind) -> Self {
        self.window = window;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_fft == 0 || self.hop == 0 || self.win_length == 0 {
            return config_err("stft sizes must be positive");
        }
        if self.win_length > self.n_fft {
            return config_err(format!(
                "win_length {} exceeds n_fft {}",
                self.win_length, self.n_fft
            ));
        }
        if self.hop > self.win_length {
            return config_err(format!(
                "hop {} exceeds win_length {}",
                self.hop, self.win_length
            ));
        }
        if !(self.eps > 0.0) {
            return config_err("eps must be positive");
        }
        Ok(())
    }

    pub fn num_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Frames produced for a signal of `len` samples with centered padding.
    pub fn num_frames(&self, len: usize) -> usize {
        len / self.hop + 1
    }

    /// Offset of the window inside an `n_fft` frame.
    pub fn window_offset(&self) -> usize {
        (self.n_fft - self.win_length) / 2
    }

    /// The `win_length` nonzero taps (periodic Hann or ones).
    pub fn window_taps(&self) -> Vec<f64> {
        let n = self.win_length;
        match self.window {
            WindowKind::Rectangular => vec![1.0; n],
            WindowKind::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }

    /// Window zero-padded and centered to `n_fft` samples.
    pub fn window(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.n_fft];
        let off = self.window_offset();
        w[off..off + self.win_length].copy_from_slice(&self.window_taps());
        w
    }
}

/// Maps a (possibly out-of-range) index into `[0, len)` by mirror reflection
/// without repeating the edge sample, extended periodically for pads longer
/// than the signal.
pub fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= len as isize {
        m = period - m;
    }
    m as usize
}

/// Bins × frames complex spectrogram.
#[derive(Debug, Clone)]
pub struct ComplexSpectrogram {
    /// Frame-major storage: `values[frame * bins + bin]`.
    values: Vec<Complex64>,
    frames: usize,
    bins: usize,
    config: StftConfig,
}

impl ComplexSpectrogram {
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn get(&self, bin: usize, frame: usize) -> Complex64 {
        self.values[frame * self.bins + bin]
    }

    pub fn frame(&self, frame: usize) -> &[Complex64] {
        &self.values[frame * self.bins..(frame + 1) * self.bins]
    }

    /// Magnitudes in frame-major order.
    pub fn magnitude(&self) -> Vec<f64> {
        self.values.iter().map(|c| c.norm()).collect()
    }
}

/// Short-time Fourier transform with centered reflection padding of
/// `n_fft / 2` samples on each side.
pub fn stft(wave: &Waveform, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    let x = wave.samples();
    let frames = cfg.num_frames(x.len());
    let bins = cfg.num_bins();
    let window = cfg.window();
    let half = (cfg.n_fft / 2) as isize;
    let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
    let mut buf = vec![Complex64::default(); cfg.n_fft];
    let mut values = Vec::with_capacity(frames * bins);
    for f in 0..frames {
        let start = (f * cfg.hop) as isize - half;
        for (n, slot) in buf.iter_mut().enumerate() {
            let s = x[reflect_index(start + n as isize, x.len())];
            *slot = Complex64::new(s * window[n], 0.0);
        }
        fft.process(&mut buf);
        values.extend_from_slice(&buf[..bins]);
    }
    Ok(ComplexSpectrogram {
        values,
        frames,
        bins,
        config: cfg.clone(),
    })
}
