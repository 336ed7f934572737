//! Native objective metrics and per-utterance records.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::{stft, StftConfig, Waveform};
use crate::error::{arg_err, Error, Result};

/// SI-SNR is clamped to ±this many dB; identical signals hit the upper cap.
pub const SI_SNR_CAP_DB: f64 = 60.0;

pub const LSD_NFFT: usize = 1024;
pub const LSD_HOP: usize = 256;
/// Power floor before taking logs.
pub const LSD_POWER_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MetricName {
    #[serde(rename = "SI-SNR")]
    SiSnr,
    #[serde(rename = "LSD")]
    Lsd,
    #[serde(rename = "PESQ")]
    Pesq,
    #[serde(rename = "CSIG")]
    Csig,
    #[serde(rename = "CBAK")]
    Cbak,
    #[serde(rename = "COVL")]
    Covl,
    #[serde(rename = "VISQOL")]
    Visqol,
    #[serde(rename = "STOI")]
    Stoi,
}

impl MetricName {
    pub const ALL: [MetricName; 8] = [
        MetricName::SiSnr,
        MetricName::Lsd,
        MetricName::Pesq,
        MetricName::Csig,
        MetricName::Cbak,
        MetricName::Covl,
        MetricName::Visqol,
        MetricName::Stoi,
    ];

    /// Computed in-process; the rest need a registered adapter.
    pub const NATIVE: [MetricName; 2] = [MetricName::SiSnr, MetricName::Lsd];

    /// Default report columns. STOI is left out of the tables but can be
    /// requested explicitly.
    pub const PERCEPTUAL: [MetricName; 5] = [
        MetricName::Cbak,
        MetricName::Covl,
        MetricName::Csig,
        MetricName::Pesq,
        MetricName::Visqol,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MetricName::SiSnr => "SI-SNR",
            MetricName::Lsd => "LSD",
            MetricName::Pesq => "PESQ",
            MetricName::Csig => "CSIG",
            MetricName::Cbak => "CBAK",
            MetricName::Covl => "COVL",
            MetricName::Visqol => "VISQOL",
            MetricName::Stoi => "STOI",
        }
    }

    pub fn is_native(&self) -> bool {
        Self::NATIVE.contains(self)
    }

    /// Documented value range.
    pub fn range(&self) -> (f64, f64) {
        match self {
            MetricName::SiSnr => (-SI_SNR_CAP_DB, SI_SNR_CAP_DB),
            MetricName::Lsd => (0.0, f64::INFINITY),
            MetricName::Pesq => (-0.5, 4.5),
            MetricName::Csig | MetricName::Cbak | MetricName::Covl | MetricName::Visqol => (1.0, 5.0),
            MetricName::Stoi => (0.0, 1.0),
        }
    }

    pub fn in_range(&self, value: f64) -> bool {
        let (lo, hi) = self.range();
        value >= lo && value <= hi
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Argument(format!("unknown metric `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub utterance_id: String,
    pub metric: MetricName,
    pub value: f64,
    /// False when the value falls outside the metric's documented range.
    pub in_range: bool,
}

impl MetricRecord {
    pub fn new(utterance_id: impl Into<String>, metric: MetricName, value: f64) -> Self {
        Self {
            utterance_id: utterance_id.into(),
            metric,
            value,
            in_range: metric.in_range(value),
        }
    }
}

fn check_pair(reference: &Waveform, estimate: &Waveform) -> Result<()> {
    if reference.len() != estimate.len() {
        return arg_err(format!(
            "reference has {} samples, estimate {}",
            reference.len(),
            estimate.len()
        ));
    }
    if reference.is_empty() {
        return arg_err("empty signals");
    }
    Ok(())
}

/// Scale-invariant SNR in dB on zero-mean signals, clamped to ±60 dB.
pub fn si_snr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    check_pair(reference, estimate)?;
    let zero_mean = |w: &Waveform| {
        let m = w.samples().iter().sum::<f64>() / w.len() as f64;
        w.samples().iter().map(|v| v - m).collect::<Vec<_>>()
    };
    let s = zero_mean(reference);
    let e = zero_mean(estimate);
    let ss: f64 = s.iter().map(|v| v * v).sum();
    if ss == 0.0 {
        return arg_err("SI-SNR is undefined for a zero (or constant) reference");
    }
    let alpha = s.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>() / ss;
    let target: f64 = alpha * alpha * ss;
    let noise: f64 = s.iter().zip(&e).map(|(a, b)| (b - alpha * a).powi(2)).sum();
    let db = if noise == 0.0 {
        if target == 0.0 {
            -SI_SNR_CAP_DB
        } else {
            SI_SNR_CAP_DB
        }
    } else if target == 0.0 {
        -SI_SNR_CAP_DB
    } else {
        10.0 * (target / noise).log10()
    };
    Ok(db.clamp(-SI_SNR_CAP_DB, SI_SNR_CAP_DB))
}

/// Log-spectral distance in dB: RMS over frames of the per-frame RMS
/// difference of 10·log10 power spectra (1024-point Hann STFT, hop 256).
pub fn log_spectral_distance(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    check_pair(reference, estimate)?;
    let cfg = StftConfig::new(LSD_NFFT, LSD_HOP, LSD_NFFT)?;
    let a = stft(reference, &cfg)?;
    let b = stft(estimate, &cfg)?;
    let mut total = 0.0;
    for f in 0..a.frames() {
        let frame_ms: f64 = a
            .frame(f)
            .iter()
            .zip(b.frame(f))
            .map(|(x, y)| {
                let d = 10.0 * (x.norm_sqr().max(LSD_POWER_EPS) / y.norm_sqr().max(LSD_POWER_EPS)).log10();
                d * d
            })
            .sum::<f64>()
            / a.bins() as f64;
        total += frame_ms;
    }
    Ok((total / a.frames() as f64).sqrt())
}

pub fn native_metric(metric: MetricName, reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    match metric {
        MetricName::SiSnr => si_snr(reference, estimate),
        MetricName::Lsd => log_spectral_distance(reference, estimate),
        other => arg_err(format!("{other} is not computed natively")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn wave(samples: Vec<f64>) -> Waveform {
        Waveform::new(samples, 16_000).unwrap()
    }

    fn sine(len: usize, cycles: f64) -> Vec<f64> {
        (0..len).map(|i| (2.0 * PI * cycles * i as f64 / len as f64).sin()).collect()
    }

    #[test]
    fn si_snr_identity_hits_cap() {
        let r = wave(sine(4000, 37.0));
        assert_eq!(si_snr(&r, &r).unwrap(), SI_SNR_CAP_DB);
        assert_eq!(si_snr(&r, &r.scaled(3.0)).unwrap(), SI_SNR_CAP_DB);
    }

    #[test]
    fn si_snr_equal_power_orthogonal_noise_is_zero_db() {
        // Over whole periods sin and cos are orthogonal, zero-mean and equal
        // in power, so the projection keeps the sine and the cosine is all
        // residual.
        let len = 8000;
        let s = sine(len, 50.0);
        let c: Vec<f64> = (0..len).map(|i| (2.0 * PI * 50.0 * i as f64 / len as f64).cos()).collect();
        let est: Vec<f64> = s.iter().zip(&c).map(|(a, b)| a + b).collect();
        let db = si_snr(&wave(s), &wave(est)).unwrap();
        assert!(db.abs() < 0.01, "{db}");
    }

    #[test]
    fn si_snr_scale_invariant() {
        let r = wave(sine(3000, 11.0));
        let e = wave((0..3000).map(|i| (i as f64 * 0.37).sin() * 0.2 + r.samples()[i]).collect());
        let base = si_snr(&r, &e).unwrap();
        for g in [0.01, 0.5, 7.0, 1e3] {
            assert!((si_snr(&r, &e.scaled(g)).unwrap() - base).abs() < 1e-9);
        }
    }

    #[test]
    fn si_snr_rejects_zero_reference_and_length_mismatch() {
        let z = wave(vec![0.0; 100]);
        let r = wave(sine(100, 3.0));
        assert!(matches!(si_snr(&z, &r), Err(Error::Argument(_))));
        assert!(si_snr(&r, &wave(sine(99, 3.0))).is_err());
    }

    #[test]
    fn lsd_identity_and_doubling() {
        let r = wave((0..5000).map(|i| ((i * 7919) % 113) as f64 / 113.0 - 0.5).collect());
        assert_eq!(log_spectral_distance(&r, &r).unwrap(), 0.0);
        let d = log_spectral_distance(&r, &r.scaled(2.0)).unwrap();
        assert!((d - 20.0 * 2f64.log10()).abs() < 1e-9, "{d}");
    }

    #[test]
    fn range_flags() {
        assert!(MetricRecord::new("a", MetricName::Pesq, 4.5).in_range);
        assert!(!MetricRecord::new("a", MetricName::Pesq, 4.6).in_range);
        assert!(!MetricRecord::new("a", MetricName::Stoi, -0.1).in_range);
        assert_eq!("visqol".parse::<MetricName>().unwrap(), MetricName::Visqol);
        assert!("MOS".parse::<MetricName>().is_err());
    }
}
