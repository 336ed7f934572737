use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{resample_lookahead, Demucs, DemucsConfig};
use crate::error::{arg_err, Result};

/// Future input samples that can reach an output sample of a causal model.
///
/// Each strided level only looks ahead to the end of its current stride
/// block, which compounds to `stride^depth - 1` samples at the upsampled
/// rate. The windowed-sinc up/down sampling adds its kernel half-width on
/// each side of the network.
pub fn lookahead_budget(cfg: &DemucsConfig) -> usize {
    (cfg.total_stride() - 1).div_ceil(cfg.upscale) + resample_lookahead(cfg.upscale)
}

/// Perturbs `input` strictly after `t + lookahead_budget` by uniform noise
/// of the given amplitude and reports whether outputs up to and including
/// `t` stay within 1e-6 (max-abs).
pub fn causality_probe(
    model: &Demucs,
    input: &[f64],
    t: usize,
    lookahead_budget: usize,
    amplitude: f64,
    seed: u64,
) -> Result<bool> {
    if t >= input.len() {
        return arg_err(format!("probe index {t} outside input of {} samples", input.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perturbed = input.to_vec();
    for v in perturbed.iter_mut().skip(t + lookahead_budget + 1) {
        *v += amplitude * rng.random_range(-1.0..1.0);
    }
    let a = model.enhance(input, None)?;
    let b = model.enhance(&perturbed, None)?;
    let max = a[..=t]
        .iter()
        .zip(&b[..=t])
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max);
    Ok(max < 1e-6)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ParamStore;
    use crate::device;
    use candle_core::{Tensor, Var};

    fn signal(len: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        (0..len).map(|_| rng.random_range(-0.5..0.5)).collect()
    }

    #[test]
    fn budget_arithmetic() {
        let cfg = DemucsConfig { causal: true, ..DemucsConfig::tiny() };
        assert_eq!(lookahead_budget(&cfg), 3);
        let cfg = DemucsConfig { causal: true, hidden: 4, depth: 3, stride: 4, upscale: 4, ..DemucsConfig::default() };
        assert_eq!(lookahead_budget(&cfg), 16 + 64);
    }

    #[test]
    fn causal_passes_and_noncausal_fails() {
        let x = signal(1024);
        let causal = DemucsConfig { causal: true, ..DemucsConfig::tiny() };
        let mut s = ParamStore::new();
        let m = Demucs::new(&causal, None, 1, &mut s).unwrap();
        assert!(causality_probe(&m, &x, 500, lookahead_budget(&causal), 0.3, 2).unwrap());
        let mut s = ParamStore::new();
        let m = Demucs::new(&DemucsConfig::tiny(), None, 1, &mut s).unwrap();
        assert!(!causality_probe(&m, &x, 500, lookahead_budget(&causal), 0.3, 2).unwrap());
        assert!(causality_probe(&m, &x, 500, 0, 0.0, 2).unwrap());
    }

    #[test]
    fn budget_is_tight_for_causal_model() {
        // The deep path is too weak at init to trip the 1e-6 probe, so the
        // dependency structure is read off the exact input gradient instead.
        let cfg = DemucsConfig { causal: true, ..DemucsConfig::tiny() };
        let budget = lookahead_budget(&cfg);
        let mut s = ParamStore::new();
        let m = Demucs::new(&cfg, None, 4, &mut s).unwrap();
        let x = Var::from_tensor(&Tensor::from_vec(signal(512), (1, 512), &device()).unwrap()).unwrap();
        let t = 100;
        let out = m.forward(x.as_tensor(), None).unwrap().output;
        let grads = out.narrow(1, t, 1).unwrap().sum_all().unwrap().backward().unwrap();
        let g = grads.get(&x).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert!(g[t + budget] != 0.0);
        assert!(g[t + budget + 1..].iter().all(|&v| v == 0.0));
    }
}
