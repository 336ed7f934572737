use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::manifest::{write_manifest, ManifestRecord, Split};
use super::mix_at_snr;
use crate::audio::wav::{write_wav, WavFormat};
use crate::audio::Waveform;
use crate::error::{config_err, Result};

/// Desk-scale synthetic corpus: voiced harmonic "speech" with syllabic
/// envelopes mixed with colored noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default = "default_count")]
    pub num_utterances: usize,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "default_rate")]
    pub sample_rate: u32,
    #[serde(default)]
    pub snr_min_db: f64,
    #[serde(default = "default_snr_max")]
    pub snr_max_db: f64,
    /// Share of utterances marked as validation.
    #[serde(default = "default_valid_fraction")]
    pub valid_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_count() -> usize {
    8
}
fn default_duration() -> f64 {
    2.0
}
fn default_rate() -> u32 {
    16_000
}
fn default_snr_max() -> f64 {
    10.0
}
fn default_valid_fraction() -> f64 {
    0.25
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_utterances: default_count(),
            duration_s: default_duration(),
            sample_rate: default_rate(),
            snr_min_db: 0.0,
            snr_max_db: default_snr_max(),
            valid_fraction: default_valid_fraction(),
            seed: 0,
        }
    }
}

pub fn synth_speech(len: usize, sample_rate: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sr = sample_rate as f64;
    let f0 = rng.random_range(100.0..220.0);
    let drift = rng.random_range(0.5..2.0);
    let syllable_hz = rng.random_range(3.0..5.0);
    let formants = [rng.random_range(300.0..900.0), rng.random_range(900.0..2500.0)];
    let harmonics = ((0.45 * sr / f0) as usize).clamp(1, 40);
    let amps: Vec<f64> = (1..=harmonics)
        .map(|k| {
            let f = k as f64 * f0;
            let bump: f64 = formants.iter().map(|fm| (-((f - fm) / 250.0).powi(2)).exp()).sum();
            (0.2 + bump) / k as f64
        })
        .collect();
    let phases: Vec<f64> = (0..harmonics).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let mut phase = 0.0;
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        let t = i as f64 / sr;
        let f = f0 * (1.0 + 0.05 * (2.0 * PI * drift * t).sin());
        phase += 2.0 * PI * f / sr;
        let env = (PI * syllable_hz * t).sin().powi(2);
        let v: f64 = amps
            .iter()
            .zip(&phases)
            .enumerate()
            .map(|(k, (a, p))| a * ((k + 1) as f64 * phase + p).sin())
            .sum();
        out.push(env * v);
    }
    // Room tone about 60 dB under the peak, as in any real recording; without
    // it the spectrum between harmonics is empty and log magnitudes there
    // are meaningless.
    let voiced_peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for v in out.iter_mut() {
        let n: f64 = StandardNormal.sample(rng);
        *v += ROOM_TONE * voiced_peak * n;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    out.iter_mut().for_each(|v| *v *= 0.5 / peak);
    out
}

const ROOM_TONE: f64 = 1e-3;

pub fn synth_noise(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let pole = rng.random_range(0.0..0.9);
    let mut state = 0.0;
    (0..len)
        .map(|_| {
            let w: f64 = StandardNormal.sample(rng);
            state = pole * state + (1.0 - pole) * w;
            0.3 * state
        })
        .collect()
}

/// Writes clean/, noise/ and noisy/ WAVs plus `manifest.jsonl` (mixing
/// records) under `out`, returning the records.
pub fn generate_dataset(cfg: &SynthConfig, out: &Path) -> Result<Vec<ManifestRecord>> {
    if cfg.num_utterances == 0 || !(cfg.duration_s > 0.0) || cfg.snr_max_db < cfg.snr_min_db {
        return config_err("synthetic dataset needs utterances, a positive duration and snr_min <= snr_max");
    }
    let len = (cfg.duration_s * cfg.sample_rate as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for sub in ["clean", "noise", "noisy"] {
        std::fs::create_dir_all(out.join(sub))?;
    }
    let n_valid = ((cfg.num_utterances as f64 * cfg.valid_fraction).round() as usize).min(cfg.num_utterances - 1);
    let mut records = Vec::with_capacity(cfg.num_utterances);
    for i in 0..cfg.num_utterances {
        let id = format!("syn_{i:04}");
        let clean = Waveform::new(synth_speech(len, cfg.sample_rate, &mut rng), cfg.sample_rate)?;
        let noise = Waveform::new(synth_noise(len, &mut rng), cfg.sample_rate)?;
        let snr_db = if cfg.snr_max_db > cfg.snr_min_db {
            rng.random_range(cfg.snr_min_db..cfg.snr_max_db)
        } else {
            cfg.snr_min_db
        };
        let pair = mix_at_snr(&id, &clean, &noise, snr_db)?;
        let rel = |sub: &str| PathBuf::from(sub).join(format!("{id}.wav"));
        write_wav(out.join(rel("clean")), &clean, WavFormat::Float32)?;
        write_wav(out.join(rel("noise")), &noise, WavFormat::Float32)?;
        write_wav(out.join(rel("noisy")), &pair.noisy, WavFormat::Float32)?;
        let split = if i >= cfg.num_utterances - n_valid { Split::Valid } else { Split::Train };
        let (clean_path, noise_path) = (rel("clean"), rel("noise"));
        records.push(ManifestRecord::Mixed {
            id,
            clean_path,
            noise_path,
            snr_db,
            split: Some(split),
        });
    }
    write_manifest(out.join("manifest.jsonl"), &records)?;
    Ok(records)
}
