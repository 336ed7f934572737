//! Differentiable magnitude spectra built from gather + matmul.
//!
//! Framing (with centered reflection padding) is a single `index_select`
//! and the windowed DFT is a matmul against precomputed cosine/sine bases,
//! so gradients flow back to the waveform through ordinary tensor ops.

use std::f64::consts::PI;

use candle_core::Tensor;

use super::{reflect_index, StftConfig};
use crate::error::Result;
use crate::{device, DTYPE};

#[derive(Debug, Clone)]
pub struct SpectralFrontend {
    cfg: StftConfig,
    /// (win_length, bins), window folded in.
    basis_re: Tensor,
    basis_im: Tensor,
    /// When false, frames start at zero and the tail is zero-padded instead
    /// of centering with reflection.
    centered: bool,
}

impl SpectralFrontend {
    pub fn new(cfg: &StftConfig) -> Result<Self> {
        Self::build(cfg, true)
    }

    /// Frames `[j * hop, j * hop + win_length)` with zero padding past the end.
    pub fn uncentered(cfg: &StftConfig) -> Result<Self> {
        Self::build(cfg, false)
    }

    fn build(cfg: &StftConfig, centered: bool) -> Result<Self> {
        cfg.validate()?;
        let taps = cfg.window_taps();
        let off = if centered { cfg.window_offset() } else { 0 };
        let bins = cfg.num_bins();
        let win = cfg.win_length;
        let mut re = Vec::with_capacity(win * bins);
        let mut im = Vec::with_capacity(win * bins);
        for (w, tap) in taps.iter().enumerate() {
            let n = (off + w) as f64;
            for k in 0..bins {
                let ang = 2.0 * PI * k as f64 * n / cfg.n_fft as f64;
                re.push(tap * ang.cos());
                im.push(-tap * ang.sin());
            }
        }
        let dev = device();
        Ok(Self {
            cfg: cfg.clone(),
            basis_re: Tensor::from_vec(re, (win, bins), &dev)?,
            basis_im: Tensor::from_vec(im, (win, bins), &dev)?,
            centered,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    pub fn num_frames(&self, len: usize) -> usize {
        if self.centered {
            self.cfg.num_frames(len)
        } else {
            (len / self.cfg.hop).max(1)
        }
    }

    fn gather_index(&self, len: usize) -> Result<Tensor> {
        let frames = self.num_frames(len);
        let win = self.cfg.win_length;
        let mut idx = Vec::with_capacity(frames * win);
        if self.centered {
            let start0 = self.cfg.window_offset() as isize - (self.cfg.n_fft / 2) as isize;
            for f in 0..frames {
                let start = start0 + (f * self.cfg.hop) as isize;
                for w in 0..win {
                    idx.push(reflect_index(start + w as isize, len) as u32);
                }
            }
        } else {
            // Index `len` points at the appended zero sample.
            for f in 0..frames {
                for w in 0..win {
                    idx.push((f * self.cfg.hop + w).min(len) as u32);
                }
            }
        }
        Ok(Tensor::from_vec(idx, frames * win, &device())?)
    }

    /// Real and imaginary parts, each (batch, frames, bins).
    pub fn complex(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let (b, len) = x.dims2()?;
        let frames = self.num_frames(len);
        let idx = self.gather_index(len)?;
        let src = if self.centered {
            x.clone()
        } else {
            x.pad_with_zeros(1, 0, 1)?
        };
        let framed = src
            .index_select(&idx, 1)?
            .reshape((b * frames, self.cfg.win_length))?;
        let bins = self.cfg.num_bins();
        let re = framed.matmul(&self.basis_re)?.reshape((b, frames, bins))?;
        let im = framed.matmul(&self.basis_im)?.reshape((b, frames, bins))?;
        Ok((re, im))
    }

    /// |X|^2, (batch, frames, bins).
    pub fn power(&self, x: &Tensor) -> Result<Tensor> {
        let (re, im) = self.complex(x)?;
        Ok((re.sqr()? + im.sqr()?)?)
    }

    /// max(|X|, eps), (batch, frames, bins).
    pub fn magnitude(&self, x: &Tensor) -> Result<Tensor> {
        let floor = self.cfg.eps * self.cfg.eps;
        Ok(self.power(x)?.maximum(floor)?.sqrt()?)
    }
}

pub(crate) fn to_batch(samples: &[f64]) -> Result<Tensor> {
    Ok(Tensor::from_slice(samples, (1, samples.len()), &device())?.to_dtype(DTYPE)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{stft, Waveform};

    #[test]
    fn matches_fft_stft() {
        let x: Vec<f64> = (0..700).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
        let cfg = StftConfig::new(128, 30, 100).unwrap();
        let spec = stft(&Waveform::new(x.clone(), 16_000).unwrap(), &cfg).unwrap();
        let mag = SpectralFrontend::new(&cfg)
            .unwrap()
            .magnitude(&to_batch(&x).unwrap())
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1::<f64>()
            .unwrap();
        let reference = spec.magnitude();
        assert_eq!(mag.len(), reference.len());
        for (a, b) in mag.iter().zip(&reference) {
            assert!((a - b.max(1e-7)).abs() < 1e-9);
        }
    }

    #[test]
    fn uncentered_frame_count() {
        let cfg = StftConfig::new(512, 320, 400).unwrap();
        let fe = SpectralFrontend::uncentered(&cfg).unwrap();
        assert_eq!(fe.num_frames(16_000), 50);
        let p = fe.power(&Tensor::zeros((2, 16_000), DTYPE, &device()).unwrap()).unwrap();
        assert_eq!(p.dims(), &[2, 50, 257]);
    }
}
