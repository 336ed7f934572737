//! Band-limited (Kaiser-windowed sinc) resampling.
//!
//! The same kernel backs the plain `f64` path used on ingest and the
//! differentiable polyphase convolutions used inside the enhancer, so the
//! two agree up to summation order.

use std::f64::consts::PI;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::device;
use crate::error::{config_err, Result};

/// Kernel half-width in zero crossings of the lower-rate sinc.
pub const RESAMPLE_ZEROS: usize = 32;
const KAISER_BETA: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResampleFactor {
    pub up: u32,
    pub down: u32,
}

impl ResampleFactor {
    pub fn new(up: u32, down: u32) -> Result<Self> {
        if up == 0 || down == 0 {
            return config_err("resampling factor must be positive");
        }
        Ok(Self { up, down })
    }

    pub fn up(u: u32) -> Result<Self> {
        Self::new(u, 1)
    }

    pub fn down(u: u32) -> Result<Self> {
        Self::new(1, u)
    }

    pub fn ratio(&self) -> f64 {
        self.up as f64 / self.down as f64
    }
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Unnormalized low-pass kernel at offset `t` input samples, cutoff `c`
/// relative to the input Nyquist.
fn kernel(t: f64, cutoff: f64) -> f64 {
    let u = cutoff * t;
    let z = RESAMPLE_ZEROS as f64;
    if u.abs() > z {
        return 0.0;
    }
    let r = u / z;
    cutoff * sinc(u) * bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / bessel_i0(KAISER_BETA)
}

/// Taps for output position `pos` (in input samples): `(first_n, weights)`,
/// normalized so a constant input maps to the same constant.
fn taps(pos: f64, cutoff: f64) -> (isize, Vec<f64>) {
    let half = (RESAMPLE_ZEROS as f64 / cutoff).ceil() as isize;
    let first = pos.floor() as isize - half;
    let mut w: Vec<f64> = (0..=2 * half + 1)
        .map(|i| kernel(pos - (first + i) as f64, cutoff))
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    (first, w)
}

fn resample_samples(x: &[f64], factor: ResampleFactor) -> Vec<f64> {
    if factor.up == factor.down {
        return x.to_vec();
    }
    let out_len = ((x.len() as f64 * factor.ratio()).round() as usize).max(1);
    let cutoff = factor.ratio().min(1.0);
    (0..out_len)
        .map(|m| {
            let pos = (m as u64 * factor.down as u64) as f64 / factor.up as f64;
            let (first, w) = taps(pos, cutoff);
            w.iter()
                .enumerate()
                .filter_map(|(i, wi)| {
                    let n = first + i as isize;
                    (n >= 0 && (n as usize) < x.len()).then(|| wi * x[n as usize])
                })
                .sum()
        })
        .collect()
}

/// Resamples by a positive rational factor; output length is
/// `round(len * up / down)` and the sample rate scales accordingly.
pub fn sinc_resample(wave: &Waveform, factor: ResampleFactor) -> Result<Waveform> {
    if factor.up == 0 || factor.down == 0 {
        return config_err("resampling factor must be positive");
    }
    let rate = (wave.sample_rate() as u64 * factor.up as u64 / factor.down as u64).max(1) as u32;
    Waveform::new(resample_samples(wave.samples(), factor), rate)
}

/// Converts to `target_rate`, reducing the rate ratio first.
pub fn resample_to_rate(wave: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return config_err("target sample rate must be positive");
    }
    let from = wave.sample_rate();
    if from == target_rate {
        return Ok(wave.clone());
    }
    let g = gcd(from, target_rate);
    let factor = ResampleFactor::new(target_rate / g, from / g)?;
    Waveform::new(resample_samples(wave.samples(), factor), target_rate)
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Upsamples every row of a (rows, len) tensor by `u`, giving (rows, len * u).
pub fn upsample_tensor(x: &Tensor, u: usize) -> Result<Tensor> {
    if u == 1 {
        return Ok(x.clone());
    }
    let (rows, len) = x.dims2()?;
    let z = RESAMPLE_ZEROS;
    let k = 2 * z + 1;
    // Phase r evaluates position m + r/u; conv tap i reads x[m + i - z].
    let mut w = Vec::with_capacity(u * k);
    for r in 0..u {
        let pos = r as f64 / u as f64;
        let mut phase: Vec<f64> = (0..k)
            .map(|i| kernel(pos + z as f64 - i as f64, 1.0))
            .collect();
        let s: f64 = phase.iter().sum();
        phase.iter_mut().for_each(|v| *v /= s);
        w.extend(phase);
    }
    let kernel = Tensor::from_vec(w, (u, 1, k), &device())?;
    let y = x.reshape((rows, 1, len))?.conv1d(&kernel, z, 1, 1, 1)?;
    Ok(y.transpose(1, 2)?.reshape((rows, len * u))?)
}

/// Low-pass filters and decimates every row by `u`, giving (rows, ceil(len / u)).
pub fn downsample_tensor(x: &Tensor, u: usize) -> Result<Tensor> {
    if u == 1 {
        return Ok(x.clone());
    }
    let (rows, len) = x.dims2()?;
    let cutoff = 1.0 / u as f64;
    let half = RESAMPLE_ZEROS * u;
    let mut w: Vec<f64> = (0..=2 * half)
        .map(|i| kernel(half as f64 - i as f64, cutoff))
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    let kernel = Tensor::from_vec(w, (1, 1, 2 * half + 1), &device())?;
    let y = x.reshape((rows, 1, len))?.conv1d(&kernel, half, u, 1, 1)?;
    let out = y.dim(2)?;
    Ok(y.reshape((rows, out))?)
}
