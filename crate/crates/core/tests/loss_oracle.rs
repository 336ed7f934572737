mod common;

use candle_core::{Device, Tensor};

use phase_forge::audio::Waveform;
use phase_forge::objectives::{base_loss, MultiResolutionStft};

use common::{random_pair, rel_error, LossOracle};

fn wave(v: &[f64]) -> Waveform {
    Waveform::new(v.to_vec(), 16_000).unwrap()
}

#[test]
fn waveform_loss_matches_dft_oracle_at_odd_lengths() {
    let oracle = LossOracle::default();
    for (i, len) in [3001usize, 4096, 9999].into_iter().enumerate() {
        let (y, y_hat) = random_pair(len, 40 + i as u64);
        let got = base_loss(&wave(&y), &wave(&y_hat)).unwrap();
        let want = oracle.terms(&y, &y_hat);
        assert!(rel_error(got.l1_wave, want.l1) < 1e-12);
        for r in 0..3 {
            assert!(rel_error(got.sc[r], want.sc[r]) < 1e-5, "len {len} sc[{r}]: {} vs {}", got.sc[r], want.sc[r]);
            assert!(rel_error(got.mag[r], want.mag[r]) < 1e-5, "len {len} mag[{r}]: {} vs {}", got.mag[r], want.mag[r]);
        }
        assert!(rel_error(got.total, want.total) < 1e-5);
    }
}

#[test]
fn tensor_loss_is_batch_mean_of_oracle() {
    let oracle = LossOracle::default();
    let len = 4000;
    let pairs: Vec<_> = (0..2).map(|s| random_pair(len, 70 + s)).collect();
    let flat = |pick: fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>| {
        let v: Vec<f64> = pairs.iter().flat_map(|p| pick(p).iter().copied()).collect();
        Tensor::from_vec(v, (2, len), &Device::Cpu).unwrap()
    };
    let y = flat(|p| &p.0);
    let y_hat = flat(|p| &p.1);
    let terms = MultiResolutionStft::default().base(&y, &y_hat).unwrap();
    let want: f64 = pairs.iter().map(|(a, b)| oracle.base_loss(a, b)).sum::<f64>() / 2.0;
    let got = terms.total.to_scalar::<f64>().unwrap();
    assert!(rel_error(got, want) < 1e-5, "{got} vs {want}");
    let sc0: f64 = pairs.iter().map(|(a, b)| oracle.terms(a, b).sc[0]).sum::<f64>() / 2.0;
    assert!(rel_error(terms.sc[0], sc0) < 1e-5);
}

#[test]
fn silent_estimate_hits_the_log_floor() {
    // Every magnitude of a zero estimate sits at the floor, so the oracle's
    // log term is finite and the two implementations still agree.
    let oracle = LossOracle::default();
    let (y, _) = random_pair(2048, 5);
    let zeros = vec![0.0; y.len()];
    let got = base_loss(&wave(&y), &wave(&zeros)).unwrap();
    let want = oracle.terms(&y, &zeros);
    assert!(got.total.is_finite());
    for r in 0..3 {
        assert!(rel_error(got.mag[r], want.mag[r]) < 1e-5);
        assert!((got.sc[r] - 1.0).abs() < 1e-6, "sc of a silent estimate is 1, got {}", got.sc[r]);
    }
}
