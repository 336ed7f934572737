#![allow(dead_code)]

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use phase_forge::eval::{MetricName, ResultsDb, RunRecord};

/// (n_fft, hop, win_length) of the three loss resolutions.
pub const ORACLE_RESOLUTIONS: [(usize, usize, usize); 3] = [(512, 50, 240), (1024, 120, 600), (2048, 240, 1200)];
pub const ORACLE_EPS: f64 = 1e-7;

/// Direct DFT restricted to the window's nonzero taps. Rows of cos/sin are
/// stored contiguously so the inner products vectorize.
struct DftBank {
    n_fft: usize,
    hop: usize,
    win: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
    window: Vec<f64>,
}

impl DftBank {
    fn new(n_fft: usize, hop: usize, win: usize) -> Self {
        let off = (n_fft - win) / 2;
        let bins = n_fft / 2 + 1;
        let mut cos = Vec::with_capacity(bins * win);
        let mut sin = Vec::with_capacity(bins * win);
        for k in 0..bins {
            for j in 0..win {
                // Reduce k·n mod N in integers so the angle stays exact.
                let a = 2.0 * PI * ((k * (off + j)) % n_fft) as f64 / n_fft as f64;
                cos.push(a.cos());
                sin.push(a.sin());
            }
        }
        let window = (0..win).map(|j| 0.5 - 0.5 * (2.0 * PI * j as f64 / win as f64).cos()).collect();
        Self { n_fft, hop, win, cos, sin, window }
    }

    /// Magnitudes of both signals, floored, for every frame and bin.
    fn magnitudes(&self, a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let len = a.len() as isize;
        let frames = a.len() / self.hop + 1;
        let bins = self.n_fft / 2 + 1;
        let off = ((self.n_fft - self.win) / 2) as isize;
        let mirror = |i: isize| -> usize {
            let r = if i < 0 { -i } else if i >= len { 2 * (len - 1) - i } else { i };
            r as usize
        };
        let mut ma = Vec::with_capacity(frames * bins);
        let mut mb = Vec::with_capacity(frames * bins);
        let mut sa = vec![0.0; self.win];
        let mut sb = vec![0.0; self.win];
        for f in 0..frames {
            let start = (f * self.hop) as isize - (self.n_fft / 2) as isize + off;
            for j in 0..self.win {
                let idx = mirror(start + j as isize);
                sa[j] = a[idx] * self.window[j];
                sb[j] = b[idx] * self.window[j];
            }
            for k in 0..bins {
                let c = &self.cos[k * self.win..(k + 1) * self.win];
                let s = &self.sin[k * self.win..(k + 1) * self.win];
                let (ra, ia) = (dot(&sa, c), dot(&sa, s));
                let (rb, ib) = (dot(&sb, c), dot(&sb, s));
                ma.push((ra * ra + ia * ia).sqrt().max(ORACLE_EPS));
                mb.push((rb * rb + ib * ib).sqrt().max(ORACLE_EPS));
            }
        }
        (ma, mb)
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let xc = x.chunks_exact(8);
    let yc = y.chunks_exact(8);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (p, q) in xc.zip(yc) {
        for l in 0..8 {
            acc[l] += p[l] * q[l];
        }
    }
    let tail: f64 = xr.iter().zip(yr).map(|(p, q)| p * q).sum();
    acc.iter().sum::<f64>() + tail
}

pub struct LossOracle {
    banks: Vec<DftBank>,
}

impl Default for LossOracle {
    fn default() -> Self {
        Self {
            banks: ORACLE_RESOLUTIONS.iter().map(|&(n, h, w)| DftBank::new(n, h, w)).collect(),
        }
    }
}

/// Unscaled terms: `l1` is the plain sum, `mag` already divided by T.
pub struct OracleTerms {
    pub l1: f64,
    pub sc: Vec<f64>,
    pub mag: Vec<f64>,
    pub total: f64,
}

impl LossOracle {
    pub fn terms(&self, y: &[f64], y_hat: &[f64]) -> OracleTerms {
        let t = y.len() as f64;
        let l1: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum();
        let (mut sc, mut mag) = (Vec::new(), Vec::new());
        for bank in &self.banks {
            let (my, mh) = bank.magnitudes(y, y_hat);
            let num: f64 = my.iter().zip(&mh).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den: f64 = my.iter().map(|a| a * a).sum::<f64>().sqrt();
            sc.push(num / den);
            mag.push(my.iter().zip(&mh).map(|(a, b)| (a.ln() - b.ln()).abs()).sum::<f64>() / t);
        }
        let spectral: f64 = sc.iter().chain(&mag).sum();
        OracleTerms { l1, sc, mag, total: (l1 + spectral) / t }
    }

    /// (||y - ŷ||_1 + Σ_i sc_i + mag_i) / T.
    pub fn base_loss(&self, y: &[f64], y_hat: &[f64]) -> f64 {
        self.terms(y, y_hat).total
    }
}

pub fn rel_error(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
}

/// Reference and a perturbed estimate of mixed character: noise, tones,
/// and a scaled copy.
pub fn random_pair(len: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f: f64 = rng.random_range(0.005..0.3);
    let y: Vec<f64> = (0..len)
        .map(|i| 0.5 * (i as f64 * f).sin() + rng.random_range(-0.3..0.3))
        .collect();
    let gain: f64 = rng.random_range(0.5..1.5);
    let noise: f64 = rng.random_range(0.01..0.5);
    let y_hat = y.iter().map(|v| gain * v + noise * rng.random_range(-1.0..1.0)).collect();
    (y, y_hat)
}

pub fn record(config: &str, setting: &str, phonetic: &str, causal: bool, values: [f64; 5]) -> RunRecord {
    RunRecord {
        config: config.into(),
        setting: setting.into(),
        phonetic_model: phonetic.into(),
        causal,
        layer: None,
        metrics: MetricName::PERCEPTUAL.into_iter().zip(values).collect::<BTreeMap<_, _>>(),
        seed: 0,
        checkpoint: "published".into(),
        checkpoint_hash: "-".into(),
        layer_weights: None,
    }
}

/// Published layer-selection results (CBAK, COVL, CSIG, PESQ, VISQOL).
pub const LAYER_ROWS: [(&str, [f64; 5]); 16] = [
    ("Baseline", [3.50, 3.65, 4.33, 2.93, 3.16]),
    ("0", [3.49, 3.65, 4.33, 2.93, 3.23]),
    ("1", [3.50, 3.68, 4.37, 2.95, 3.25]),
    ("2", [3.55, 3.73, 4.39, 3.02, 3.27]),
    ("3", [3.51, 3.71, 4.38, 2.99, 3.28]),
    ("4", [3.55, 3.71, 4.37, 3.00, 3.27]),
    ("5", [3.53, 3.71, 4.38, 3.00, 3.27]),
    ("6", [3.53, 3.71, 4.38, 2.99, 3.25]),
    ("7", [3.52, 3.67, 4.35, 2.95, 3.25]),
    ("8", [3.51, 3.68, 4.36, 2.96, 3.27]),
    ("9", [3.51, 3.65, 4.33, 2.94, 3.25]),
    ("10", [3.52, 3.69, 4.35, 2.98, 3.22]),
    ("11", [3.50, 3.68, 4.36, 2.96, 3.27]),
    ("12", [3.49, 3.67, 4.35, 2.95, 3.27]),
    ("Avg(0-12)", [3.56, 3.76, 4.42, 3.06, 3.29]),
    ("Lrn-W-Avg(0-12)", [3.59, 3.78, 4.43, 3.07, 3.30]),
];

pub fn layer_db() -> ResultsDb {
    let runs = LAYER_ROWS
        .iter()
        .map(|(label, v)| {
            let setting = if *label == "Baseline" { "Base" } else { "Cond" };
            let mut r = record("H=48,U=4,S=4", setting, "H", false, *v);
            r.layer = Some(label.to_string());
            r
        })
        .collect();
    ResultsDb { runs }
}

/// Published H=48,U=4,S=4 setting comparison. Causal conditioning has no
/// entries because that combination is not allowed.
pub fn setting_db() -> ResultsDb {
    let c = "H=48,U=4,S=4";
    let rows: [(&str, &str, Option<[f64; 5]>, [f64; 5]); 7] = [
        ("Base", "-", Some([3.47, 3.67, 4.34, 2.95, 3.20]), [3.50, 3.65, 4.33, 2.93, 3.20]),
        ("Reg", "H-L6", Some([3.45, 3.65, 4.32, 2.94, 3.17]), [3.53, 3.67, 4.34, 2.96, 3.16]),
        ("Sup", "H-L6", Some([3.47, 3.69, 4.35, 2.96, 3.05]), [3.51, 3.66, 4.34, 2.93, 3.20]),
        ("Cond", "H-L6", None, [3.53, 3.71, 4.38, 2.99, 3.25]),
        ("Reg", "ASR", Some([3.46, 3.66, 4.33, 2.93, 3.20]), [3.52, 3.67, 4.35, 2.95, 3.20]),
        ("Sup", "ASR", Some([3.43, 3.62, 4.30, 2.90, 3.20]), [3.53, 3.70, 4.36, 2.98, 3.17]),
        ("Cond", "ASR", None, [3.50, 3.64, 4.33, 2.92, 3.17]),
    ];
    let mut runs = Vec::new();
    for (setting, phon, causal, noncausal) in rows {
        if let Some(v) = causal {
            runs.push(record(c, setting, phon, true, v));
        }
        runs.push(record(c, setting, phon, false, noncausal));
    }
    ResultsDb { runs }
}
