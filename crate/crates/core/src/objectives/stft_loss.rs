//! L1 + multi-resolution STFT objective.
//!
//! Per resolution the spectral-convergence term is the Frobenius ratio
//! `||(|Y| - |Ŷ|)||_F / ||Y||_F` and the log-magnitude term is
//! `||log|Y| - log|Ŷ|||_1 / T`. The composite is
//! `(||y - ŷ||_1 + Σ (sc_i + mag_i)) / T` with `T` the sample count.
//! Magnitudes are floored at `eps` before any use.

use candle_core::Tensor;

use super::{LossBreakdown, Setting};
use crate::audio::spectral::SpectralFrontend;
use crate::audio::{stft, StftConfig, Waveform};
use crate::error::{arg_err, Result};

/// Added under the square root of the convergence numerator so its
/// gradient stays finite when the spectra coincide.
const SC_GRAD_FLOOR: f64 = 1e-24;

/// (n_fft, hop, win_length) triples, paired positionally.
pub const RESOLUTIONS: [(usize, usize, usize); 3] = [(512, 50, 240), (1024, 120, 600), (2048, 240, 1200)];

pub fn default_resolutions() -> Vec<StftConfig> {
    RESOLUTIONS
        .iter()
        .map(|&(n, h, w)| StftConfig::new(n, h, w).expect("built-in resolutions are valid"))
        .collect()
}

fn floored_magnitude(wave: &Waveform, cfg: &StftConfig) -> Result<Vec<f64>> {
    Ok(stft(wave, cfg)?
        .magnitude()
        .into_iter()
        .map(|m| m.max(cfg.eps))
        .collect())
}

fn check_pair(y: &Waveform, y_hat: &Waveform) -> Result<()> {
    if y.len() != y_hat.len() {
        return arg_err(format!("length mismatch: reference {} vs estimate {}", y.len(), y_hat.len()));
    }
    if y.sample_rate() != y_hat.sample_rate() {
        return arg_err("sample rate mismatch between reference and estimate");
    }
    Ok(())
}

fn sc_from_mags(my: &[f64], mh: &[f64]) -> Result<f64> {
    let den: f64 = my.iter().map(|a| a * a).sum::<f64>().sqrt();
    if den == 0.0 {
        return arg_err("reference has zero spectral energy; skip silent segments");
    }
    let num: f64 = my.iter().zip(mh).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(num / den)
}

fn mag_from_mags(my: &[f64], mh: &[f64], samples: usize) -> f64 {
    my.iter().zip(mh).map(|(a, b)| (a.ln() - b.ln()).abs()).sum::<f64>() / samples as f64
}

pub fn spectral_convergence(y: &Waveform, y_hat: &Waveform, cfg: &StftConfig) -> Result<f64> {
    check_pair(y, y_hat)?;
    if y.samples().iter().all(|&s| s == 0.0) {
        return arg_err("reference has zero spectral energy; skip silent segments");
    }
    sc_from_mags(&floored_magnitude(y, cfg)?, &floored_magnitude(y_hat, cfg)?)
}

pub fn log_magnitude_loss(y: &Waveform, y_hat: &Waveform, cfg: &StftConfig) -> Result<f64> {
    check_pair(y, y_hat)?;
    Ok(mag_from_mags(&floored_magnitude(y, cfg)?, &floored_magnitude(y_hat, cfg)?, y.len()))
}

/// Base objective on plain waveforms at the three default resolutions.
pub fn base_loss(y: &Waveform, y_hat: &Waveform) -> Result<LossBreakdown> {
    base_loss_with(y, y_hat, &default_resolutions())
}

pub fn base_loss_with(y: &Waveform, y_hat: &Waveform, resolutions: &[StftConfig]) -> Result<LossBreakdown> {
    check_pair(y, y_hat)?;
    let l1 = y.samples().iter().zip(y_hat.samples()).map(|(a, b)| (a - b).abs()).sum();
    let mut sc = Vec::with_capacity(resolutions.len());
    let mut mag = Vec::with_capacity(resolutions.len());
    for cfg in resolutions {
        let my = floored_magnitude(y, cfg)?;
        let mh = floored_magnitude(y_hat, cfg)?;
        if y.samples().iter().all(|&s| s == 0.0) {
            return arg_err("reference has zero spectral energy; skip silent segments");
        }
        sc.push(sc_from_mags(&my, &mh)?);
        mag.push(mag_from_mags(&my, &mh, y.len()));
    }
    Ok(LossBreakdown::assemble(Setting::Base, l1, sc, mag, 0.0, 0.0, y.len()))
}

/// Differentiable per-batch form of the base objective.
#[derive(Debug, Clone)]
pub struct MultiResolutionStft {
    frontends: Vec<SpectralFrontend>,
}

/// Scalar loss tensor plus the per-term means over the batch.
#[derive(Debug, Clone)]
pub struct BaseTerms {
    pub total: Tensor,
    pub l1: f64,
    pub sc: Vec<f64>,
    pub mag: Vec<f64>,
    pub samples: usize,
}

impl Default for MultiResolutionStft {
    fn default() -> Self {
        Self::new(&default_resolutions()).expect("built-in resolutions are valid")
    }
}

impl MultiResolutionStft {
    pub fn new(resolutions: &[StftConfig]) -> Result<Self> {
        let frontends = resolutions.iter().map(SpectralFrontend::new).collect::<Result<_>>()?;
        Ok(Self { frontends })
    }

    pub fn num_resolutions(&self) -> usize {
        self.frontends.len()
    }

    /// y, y_hat: (B, T). Each item's loss is computed separately and the
    /// batch value is their mean.
    pub fn base(&self, y: &Tensor, y_hat: &Tensor) -> Result<BaseTerms> {
        let (_, len) = y.dims2()?;
        if y_hat.dims() != y.dims() {
            return arg_err(format!("shape mismatch: {:?} vs {:?}", y.dims(), y_hat.dims()));
        }
        if y.sqr()?.sum(1)?.min(0)?.to_scalar::<f64>()? == 0.0 {
            return arg_err("reference has zero spectral energy; skip silent segments");
        }
        let t = len as f64;
        let l1 = (y - y_hat)?.abs()?.sum(1)?;
        let mut per_item = l1.clone();
        let mut sc = Vec::with_capacity(self.frontends.len());
        let mut mag = Vec::with_capacity(self.frontends.len());
        for fe in &self.frontends {
            let my = fe.magnitude(y)?;
            let mh = fe.magnitude(y_hat)?;
            let den = my.sqr()?.sum((1, 2))?.sqrt()?;
            let num = ((&my - &mh)?.sqr()?.sum((1, 2))? + SC_GRAD_FLOOR)?.sqrt()?;
            let sc_i = (num / &den)?;
            let mag_i = ((my.log()? - mh.log()?)?.abs()?.sum((1, 2))? / t)?;
            sc.push(sc_i.mean(0)?.to_scalar::<f64>()?);
            mag.push(mag_i.mean(0)?.to_scalar::<f64>()?);
            per_item = ((per_item + sc_i)? + mag_i)?;
        }
        let total = (per_item / t)?.mean(0)?;
        Ok(BaseTerms {
            total,
            l1: l1.mean(0)?.to_scalar::<f64>()?,
            sc,
            mag,
            samples: len,
        })
    }
}
