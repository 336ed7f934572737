use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::audio::mel::{hz_to_mel, mel_to_hz};
use crate::audio::{reflect_index, Waveform};
use crate::error::{arg_err, Result};

pub const BANDSTOP_NFFT: usize = 1024;
/// Half the frame: periodic Hann analysis frames then sum to one.
pub const BANDSTOP_HOP: usize = BANDSTOP_NFFT / 2;

/// A contiguous stop band given on the mel axis, with its Hz edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MelBand {
    pub lo_mel: f64,
    pub hi_mel: f64,
    pub sample_rate: u32,
}

impl MelBand {
    pub fn lo_hz(&self) -> f64 {
        mel_to_hz(self.lo_mel)
    }

    pub fn hi_hz(&self) -> f64 {
        mel_to_hz(self.hi_mel)
    }

    pub fn center_hz(&self) -> f64 {
        mel_to_hz(0.5 * (self.lo_mel + self.hi_mel))
    }

    fn contains_bin(&self, k: usize) -> bool {
        let mel = hz_to_mel(k as f64 * self.sample_rate as f64 / BANDSTOP_NFFT as f64);
        mel >= self.lo_mel && mel <= self.hi_mel
    }
}

/// Band of width `fraction` of the mel axis (0 to Nyquist) with a start
/// drawn uniformly so the band fits.
pub fn draw_band(fraction: f64, sample_rate: u32, rng: &mut ChaCha8Rng) -> Result<MelBand> {
    if !(0.0..1.0).contains(&fraction) {
        return arg_err(format!("band-stop fraction must be in [0, 1), got {fraction}"));
    }
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    let width = fraction * top;
    let lo = rng.random_range(0.0..=top - width);
    Ok(MelBand {
        lo_mel: lo,
        hi_mel: lo + width,
        sample_rate,
    })
}

/// Zeroes the band's FFT bins frame by frame and overlap-adds the result.
/// Periodic Hann analysis at 50% overlap with rectangular synthesis
/// reconstructs unmasked content exactly.
pub fn apply_band_stop(wave: &Waveform, band: &MelBand) -> Result<Waveform> {
    if band.hi_mel <= band.lo_mel {
        return Ok(wave.clone());
    }
    let n = BANDSTOP_NFFT;
    let x = wave.samples();
    let len = x.len();
    let window: Vec<f64> = (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect();
    let mask: Vec<bool> = (0..n)
        .map(|k| band.contains_bin(if k <= n / 2 { k } else { n - k }))
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut out = vec![0.0; len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    // Frames start at -hop so every sample is covered by two frames.
    let mut start = -(BANDSTOP_HOP as isize);
    while start < len as isize {
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(extended(x, start + i as isize) * window[i], 0.0);
        }
        fwd.process(&mut buf);
        for (b, &m) in buf.iter_mut().zip(&mask) {
            if m {
                *b = Complex64::new(0.0, 0.0);
            }
        }
        inv.process(&mut buf);
        for (i, b) in buf.iter().enumerate() {
            let t = start + i as isize;
            if t >= 0 && (t as usize) < len {
                out[t as usize] += b.re / n as f64;
            }
        }
        start += BANDSTOP_HOP as isize;
    }
    Waveform::new(out, wave.sample_rate())
}

/// Point reflection about the end samples, which keeps the slope
/// continuous so edge frames do not smear energy across bands.
fn extended(x: &[f64], i: isize) -> f64 {
    let len = x.len();
    let mirrored = x[reflect_index(i, len)];
    if i < 0 {
        2.0 * x[0] - mirrored
    } else if i as usize >= len {
        2.0 * x[len - 1] - mirrored
    } else {
        mirrored
    }
}

/// Draws a band and removes it; `fraction == 0` returns the input.
pub fn band_stop_mel(wave: &Waveform, fraction: f64, rng: &mut ChaCha8Rng) -> Result<Waveform> {
    let band = draw_band(fraction, wave.sample_rate(), rng)?;
    if fraction == 0.0 {
        return Ok(wave.clone());
    }
    apply_band_stop(wave, &band)
}
