//! HTK mel scale and triangular filterbanks.

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// (bins, bands) triangular filterbank spanning `[f_min, f_max]`.
pub fn filterbank(n_fft: usize, sample_rate: u32, bands: usize, f_min: f64, f_max: f64) -> Vec<f64> {
    let bins = n_fft / 2 + 1;
    let (m_lo, m_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let edges: Vec<f64> = (0..bands + 2)
        .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (bands + 1) as f64))
        .collect();
    let mut fb = vec![0.0; bins * bands];
    for k in 0..bins {
        let f = k as f64 * sample_rate as f64 / n_fft as f64;
        for b in 0..bands {
            let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            let v = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            fb[k * bands + b] = v;
        }
    }
    fb
}
