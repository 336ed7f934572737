use candle_core::{Tensor, Var};
use phase_forge::objectives::Setting;
use phase_forge::phonetic::{PhoneticProvider, ToyProvider, ToyProviderConfig};
use phase_forge::trainer::{gradient_check, tiny_batch, tiny_session};

#[test]
fn all_settings_match_finite_differences() {
    let (x, y) = tiny_batch(512, 7).unwrap();
    for setting in Setting::ALL {
        let session = tiny_session(setting, 11).unwrap();
        let report = gradient_check(&session, &x, &y, 24, 5).unwrap();
        let worst = report.probes.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error)).unwrap();
        eprintln!("{setting}: max rel error {:.3e} at {}[{}]", report.max_rel_error, worst.param, worst.index);
        assert!(report.max_rel_error < 1e-3, "{setting}: {:#?}", report.probes);
        assert!(report.frozen.iter().all(|f| f.max_abs_grad == 0.0));
        if setting.uses_provider() {
            assert!(!report.frozen.is_empty());
        }
        if setting == Setting::Conditioning {
            let logits: Vec<_> = report.probes.iter().filter(|p| p.param == "selection.logits").collect();
            assert!(!logits.is_empty());
            assert!(logits.iter().all(|p| p.analytic != 0.0));
        }
    }
}

#[test]
fn deepest_toy_layer_gradient_matches_finite_differences() {
    let provider = ToyProvider::new(&ToyProviderConfig::default()).unwrap();
    let (_, y) = tiny_batch(1600, 3).unwrap();
    let wave = Var::from_tensor(&y).unwrap();
    let project = |t: &Tensor| -> Tensor {
        let feats = provider.extract(t).unwrap();
        let last = feats.layer(12).unwrap();
        let w = Tensor::arange(0.0, last.elem_count() as f64, last.device()).unwrap().reshape(last.dims()).unwrap();
        (last * (w * 0.01).unwrap().cos().unwrap()).unwrap().sum_all().unwrap()
    };
    let grads = project(wave.as_tensor()).backward().unwrap();
    let analytic = grads.get(wave.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
    let base = y.flatten_all().unwrap().to_vec1::<f64>().unwrap();
    let h = 1e-5;
    for idx in [10, 333, 800, 1211, 1500] {
        let at = |d: f64| {
            let mut v = base.clone();
            v[idx] += d;
            project(&Tensor::from_vec(v, (1, 1600), y.device()).unwrap()).to_scalar::<f64>().unwrap()
        };
        let numeric = (at(h) - at(-h)) / (2.0 * h);
        let rel = (analytic[idx] - numeric).abs() / analytic[idx].abs().max(numeric.abs()).max(1e-8);
        assert!(rel < 1e-3, "sample {idx}: {} vs {numeric}", analytic[idx]);
    }
}
