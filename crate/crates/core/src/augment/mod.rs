//! Dataset construction and stochastic augmentation.
//!
//! Every random operation takes an explicit `ChaCha8Rng`, so a seed fixes
//! the output bytes.

mod bandstop;
mod manifest;
mod synth;

pub use bandstop::{band_stop_mel, draw_band, apply_band_stop, MelBand, BANDSTOP_HOP, BANDSTOP_NFFT};
pub use manifest::{load_manifest, load_pairs, write_manifest, ManifestRecord, Split, VALIDATION_SPEAKERS};
pub use synth::{generate_dataset, SynthConfig};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{arg_err, config_err, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NoisyCleanPair {
    pub id: String,
    pub noisy: Waveform,
    pub clean: Waveform,
}

impl NoisyCleanPair {
    pub fn new(id: impl Into<String>, noisy: Waveform, clean: Waveform) -> Result<Self> {
        if noisy.len() != clean.len() || noisy.sample_rate() != clean.sample_rate() {
            return arg_err("noisy and clean signals must share length and sample rate");
        }
        Ok(Self {
            id: id.into(),
            noisy,
            clean,
        })
    }

    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        self.clean.sample_rate()
    }

    /// `noisy - clean`.
    pub fn noise(&self) -> Vec<f64> {
        self.noisy.samples().iter().zip(self.clean.samples()).map(|(n, c)| n - c).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    #[serde(default = "default_max_shift")]
    pub max_shift_s: f64,
    /// Fraction of the mel axis removed by the band-stop.
    #[serde(default = "default_bandstop_fraction")]
    pub bandstop_fraction: f64,
    #[serde(default = "default_bandstop_prob")]
    pub bandstop_prob: f64,
    #[serde(default = "default_true")]
    pub shuffle_noises: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_max_shift() -> f64 {
    0.5
}
fn default_bandstop_fraction() -> f64 {
    0.2
}
fn default_bandstop_prob() -> f64 {
    0.5
}
fn default_true() -> bool {
    true
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            max_shift_s: default_max_shift(),
            bandstop_fraction: default_bandstop_fraction(),
            bandstop_prob: default_bandstop_prob(),
            shuffle_noises: true,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// No augmentation at all.
    pub fn disabled() -> Self {
        Self {
            max_shift_s: 0.0,
            bandstop_fraction: 0.0,
            bandstop_prob: 0.0,
            shuffle_noises: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.bandstop_fraction) {
            return config_err(format!("bandstop_fraction must be in [0, 1), got {}", self.bandstop_fraction));
        }
        if !(self.max_shift_s >= 0.0) || !self.max_shift_s.is_finite() {
            return config_err(format!("max_shift_s must be nonnegative, got {}", self.max_shift_s));
        }
        if !(0.0..=1.0).contains(&self.bandstop_prob) {
            return config_err(format!("bandstop_prob must be a probability, got {}", self.bandstop_prob));
        }
        Ok(())
    }

    pub fn max_shift_samples(&self, sample_rate: u32) -> usize {
        (self.max_shift_s * sample_rate as f64).round() as usize
    }
}

/// Scales `noise` so that `10 log10(E_clean / E_noise) = snr_db` and adds
/// it to `clean`. `f64::INFINITY` mixes in no noise.
pub fn mix_at_snr(id: &str, clean: &Waveform, noise: &Waveform, snr_db: f64) -> Result<NoisyCleanPair> {
    if clean.len() != noise.len() || clean.sample_rate() != noise.sample_rate() {
        return arg_err("clean and noise must share length and sample rate");
    }
    let ec = clean.energy();
    if ec == 0.0 {
        return arg_err("clean signal has zero energy");
    }
    let gain = noise_gain(ec, noise.energy(), snr_db)?;
    let noisy = clean.samples().iter().zip(noise.samples()).map(|(c, n)| c + gain * n).collect();
    NoisyCleanPair::new(id, Waveform::new(noisy, clean.sample_rate())?, clean.clone())
}

/// `sqrt(E_c / (E_n 10^(snr/10)))`.
pub fn noise_gain(clean_energy: f64, noise_energy: f64, snr_db: f64) -> Result<f64> {
    if snr_db == f64::INFINITY {
        return Ok(0.0);
    }
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return arg_err(format!("invalid SNR {snr_db}"));
    }
    if noise_energy == 0.0 {
        return arg_err("noise has zero energy but a finite SNR was requested");
    }
    Ok((clean_energy / (noise_energy * 10f64.powf(snr_db / 10.0))).sqrt())
}

/// Crops both signals to `T - S` samples starting at one offset drawn
/// uniformly from `0..=S`, `S = max_shift_s * sr`.
pub fn random_shift(pair: &NoisyCleanPair, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Result<NoisyCleanPair> {
    let shift = cfg.max_shift_samples(pair.sample_rate());
    if shift == 0 {
        return Ok(pair.clone());
    }
    if pair.len() <= shift {
        return arg_err(format!(
            "segment of {} samples is not longer than the shift range {shift}",
            pair.len()
        ));
    }
    let offset = rng.random_range(0..=shift);
    let keep = pair.len() - shift;
    let crop = |w: &Waveform| Waveform::new(w.samples()[offset..offset + keep].to_vec(), w.sample_rate());
    NoisyCleanPair::new(pair.id.clone(), crop(&pair.noisy)?, crop(&pair.clean)?)
}

/// Re-pairs the noise components across the batch with a random permutation.
pub fn shuffle_noises(batch: &[NoisyCleanPair], rng: &mut ChaCha8Rng) -> Result<Vec<NoisyCleanPair>> {
    let mut perm: Vec<usize> = (0..batch.len()).collect();
    perm.shuffle(rng);
    shuffle_noises_with(batch, &perm)
}

/// Item `i` receives the noise of item `perm[i]`.
pub fn shuffle_noises_with(batch: &[NoisyCleanPair], perm: &[usize]) -> Result<Vec<NoisyCleanPair>> {
    if batch.is_empty() {
        return arg_err("cannot shuffle an empty batch");
    }
    let len = batch[0].len();
    if batch.iter().any(|p| p.len() != len) {
        return arg_err("all pairs in a batch must share one length");
    }
    let mut seen = vec![false; batch.len()];
    if perm.len() != batch.len() || perm.iter().any(|&j| j >= batch.len() || std::mem::replace(&mut seen[j], true)) {
        return arg_err("not a permutation of the batch");
    }
    let noises: Vec<Vec<f64>> = batch.iter().map(NoisyCleanPair::noise).collect();
    batch
        .iter()
        .zip(perm)
        .map(|(p, &j)| {
            let noisy = p.clean.samples().iter().zip(&noises[j]).map(|(c, n)| c + n).collect();
            NoisyCleanPair::new(p.id.clone(), Waveform::new(noisy, p.sample_rate())?, p.clean.clone())
        })
        .collect()
}

/// Sliding windows of `seg_s` with hop `stride_s`; a trailing remainder
/// gets one more window, zero-padded to full length.
pub fn segment_dataset(pairs: &[NoisyCleanPair], seg_s: f64, stride_s: f64) -> Result<Vec<NoisyCleanPair>> {
    if !(seg_s > 0.0) || !(stride_s > 0.0) {
        return arg_err("segment and stride durations must be positive");
    }
    let mut out = Vec::new();
    for p in pairs {
        let sr = p.sample_rate() as f64;
        let seg = (seg_s * sr).round() as usize;
        let stride = (stride_s * sr).round().max(1.0) as usize;
        for start in segment_starts(p.len(), seg, stride) {
            let cut = |w: &Waveform| {
                let mut s: Vec<f64> = w.samples()[start..(start + seg).min(w.len())].to_vec();
                s.resize(seg, 0.0);
                Waveform::new(s, w.sample_rate())
            };
            out.push(NoisyCleanPair::new(format!("{}@{start}", p.id), cut(&p.noisy)?, cut(&p.clean)?)?);
        }
    }
    Ok(out)
}

/// Window start offsets for one utterance.
pub fn segment_starts(len: usize, seg: usize, stride: usize) -> Vec<usize> {
    if len <= seg {
        return vec![0];
    }
    let span = len - seg;
    let mut starts: Vec<usize> = (0..=span / stride).map(|i| i * stride).collect();
    // A tail window only when samples remain after the last full window.
    let next = starts.last().unwrap() + stride;
    if span % stride != 0 && next < len {
        starts.push(next);
    }
    starts
}

/// Full training-time pipeline: per-item shift, in-batch noise shuffle,
/// then per-item band-stop (same band on clean and noise).
pub fn augment_batch(batch: &[NoisyCleanPair], cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Result<Vec<NoisyCleanPair>> {
    cfg.validate()?;
    let mut items = batch
        .iter()
        .map(|p| random_shift(p, cfg, rng))
        .collect::<Result<Vec<_>>>()?;
    if cfg.shuffle_noises && items.len() > 1 {
        items = shuffle_noises(&items, rng)?;
    }
    if cfg.bandstop_fraction > 0.0 && cfg.bandstop_prob > 0.0 {
        for p in items.iter_mut() {
            if rng.random::<f64>() < cfg.bandstop_prob {
                let band = draw_band(cfg.bandstop_fraction, p.sample_rate(), rng)?;
                let clean = apply_band_stop(&p.clean, &band)?;
                let noise = apply_band_stop(&Waveform::new(p.noise(), p.sample_rate())?, &band)?;
                let noisy = clean.samples().iter().zip(noise.samples()).map(|(c, n)| c + n).collect();
                *p = NoisyCleanPair::new(p.id.clone(), Waveform::new(noisy, p.sample_rate())?, clean)?;
            }
        }
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn wave(len: usize, seed: u64, amp: f64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..len).map(|_| amp * rng.random_range(-1.0..1.0)).collect(), 16_000).unwrap()
    }

    fn snr(p: &NoisyCleanPair) -> f64 {
        let en: f64 = p.noise().iter().map(|v| v * v).sum();
        10.0 * (p.clean.energy() / en).log10()
    }

    #[test]
    fn zero_db_matches_energies() {
        let p = mix_at_snr("a", &wave(4000, 1, 0.5), &wave(4000, 2, 0.1), 0.0).unwrap();
        let en: f64 = p.noise().iter().map(|v| v * v).sum();
        assert!((en / p.clean.energy() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn infinite_snr_is_clean() {
        let c = wave(100, 1, 0.5);
        let p = mix_at_snr("a", &c, &wave(100, 2, 0.1), f64::INFINITY).unwrap();
        assert_eq!(p.noisy, c);
    }

    #[test]
    fn closed_form_gain() {
        let g = noise_gain(4.0, 1.0, 6.0206).unwrap();
        assert!((g - 1.0).abs() < 1e-4, "{g}");
    }

    #[test]
    fn snr_sweep_within_tolerance() {
        let c = wave(8000, 3, 0.3);
        let n = wave(8000, 4, 0.7);
        for k in 0..=40 {
            let target = -10.0 + k as f64;
            let p = mix_at_snr("a", &c, &n, target).unwrap();
            assert!((snr(&p) - target).abs() < 0.01);
        }
    }

    #[test]
    fn degenerate_energies_rejected() {
        let z = Waveform::zeros(100, 16_000).unwrap();
        assert!(mix_at_snr("a", &z, &wave(100, 1, 1.0), 0.0).is_err());
        assert!(mix_at_snr("a", &wave(100, 1, 1.0), &z, 0.0).is_err());
        assert!(mix_at_snr("a", &wave(100, 1, 1.0), &z, f64::INFINITY).is_ok());
    }

    #[test]
    fn shift_identity_and_determinism() {
        let p = mix_at_snr("a", &wave(16_000, 1, 0.5), &wave(16_000, 2, 0.5), 5.0).unwrap();
        let cfg = AugmentConfig { max_shift_s: 0.0, ..Default::default() };
        assert_eq!(random_shift(&p, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap(), p);
        let cfg = AugmentConfig::default();
        let a = random_shift(&p, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = random_shift(&p, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 8000);
        // Alignment: the shifted noise is a contiguous slice of the original.
        let noise = p.noise();
        let off = (0..=8000).find(|&o| p.clean.samples()[o..o + 8000] == *a.clean.samples()).unwrap();
        assert_eq!(a.noise(), noise[off..off + 8000].to_vec());
    }

    #[test]
    fn shift_longer_than_segment_rejected() {
        let p = mix_at_snr("a", &wave(1000, 1, 0.5), &wave(1000, 2, 0.5), 5.0).unwrap();
        assert!(random_shift(&p, &AugmentConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn shuffle_single_is_identity() {
        let p = mix_at_snr("a", &wave(100, 1, 0.5), &wave(100, 2, 0.5), 5.0).unwrap();
        let out = shuffle_noises(std::slice::from_ref(&p), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(out, vec![p]);
    }

    #[test]
    fn forced_swap() {
        let a = mix_at_snr("a", &wave(100, 1, 0.5), &wave(100, 2, 0.5), 5.0).unwrap();
        let b = mix_at_snr("b", &wave(100, 3, 0.5), &wave(100, 4, 0.5), 0.0).unwrap();
        let out = shuffle_noises_with(&[a.clone(), b.clone()], &[1, 0]).unwrap();
        let expect = |p: &NoisyCleanPair, q: &NoisyCleanPair| -> Vec<f64> {
            p.clean.samples().iter().zip(q.noise()).map(|(c, n)| c + n).collect()
        };
        assert_eq!(out[0].noisy.samples(), expect(&a, &b).as_slice());
        assert_eq!(out[1].noisy.samples(), expect(&b, &a).as_slice());
        assert_eq!(out[0].clean, a.clean);
        assert!(shuffle_noises_with(&[a.clone(), b], &[0, 0]).is_err());
    }

    #[test]
    fn mismatched_batch_rejected() {
        let a = mix_at_snr("a", &wave(100, 1, 0.5), &wave(100, 2, 0.5), 5.0).unwrap();
        let b = mix_at_snr("b", &wave(90, 3, 0.5), &wave(90, 4, 0.5), 5.0).unwrap();
        assert!(shuffle_noises(&[a, b], &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    fn pair_of_seconds(s: f64) -> NoisyCleanPair {
        let n = (s * 16_000.0) as usize;
        mix_at_snr("u", &wave(n, 1, 0.5), &wave(n, 2, 0.5), 5.0).unwrap()
    }

    #[test]
    fn segment_counts() {
        assert_eq!(segment_dataset(&[pair_of_seconds(4.5)], 4.5, 0.5).unwrap().len(), 1);
        let segs = segment_dataset(&[pair_of_seconds(5.5)], 4.5, 0.5).unwrap();
        assert_eq!(segs.len(), 3);
        let ids: Vec<&str> = segs.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["u@0", "u@8000", "u@16000"]);
        let short = segment_dataset(&[pair_of_seconds(1.0)], 4.5, 0.5).unwrap();
        assert_eq!(short.len(), 1);
        assert_eq!(short[0].len(), 72_000);
        assert!(short[0].clean.samples()[16_000..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn segment_remainder_gets_padded_window() {
        let segs = segment_dataset(&[pair_of_seconds(5.25)], 4.5, 0.5).unwrap();
        assert_eq!(segs.len(), 3);
        let last = &segs[2];
        assert_eq!(last.len(), 72_000);
        assert!(last.clean.samples()[68_000..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn augment_batch_is_deterministic() {
        let batch: Vec<_> = (0..4)
            .map(|i| mix_at_snr(&i.to_string(), &wave(16_000, i, 0.5), &wave(16_000, 10 + i, 0.5), 3.0).unwrap())
            .collect();
        let cfg = AugmentConfig { max_shift_s: 0.1, bandstop_prob: 1.0, ..Default::default() };
        let a = augment_batch(&batch, &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = augment_batch(&batch, &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|p| p.len() == 16_000 - 1600));
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(AugmentConfig { bandstop_fraction: 1.0, ..Default::default() }.validate().is_err());
        assert!(AugmentConfig { max_shift_s: -0.1, ..Default::default() }.validate().is_err());
    }
}
