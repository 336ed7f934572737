use candle_core::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ProviderConfig, Session, TrainConfig};
use crate::error::{arg_err, Result};
use crate::model::DemucsConfig;
use crate::objectives::{InjectionSpec, Setting};
use crate::phonetic::{LayerMode, ToyProviderConfig, LOGITS_PARAM};
use crate::device;

/// Relative step: `h = STEP * rms(parameter tensor)`, or `STEP` for an
/// all-zero tensor.
pub const STEP: f64 = 1e-4;
/// Magnitudes below this are treated as zero when forming relative errors.
pub const ABS_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradProbe {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Gradient reaching a frozen provider tensor; always reported as the
/// value found in the gradient store (absent counts as zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenProbe {
    pub param: String,
    pub max_abs_grad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub setting: Setting,
    pub probes: Vec<GradProbe>,
    pub frozen: Vec<FrozenProbe>,
    pub max_rel_error: f64,
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(ABS_FLOOR)
}

/// Compares analytic gradients of the session's total loss with central
/// finite differences at `num_probes` seeded (tensor, index) positions.
/// Selection logits, when trainable, are always among the probes.
pub fn gradient_check(session: &Session, x: &Tensor, y: &Tensor, num_probes: usize, seed: u64) -> Result<GradCheckReport> {
    if num_probes == 0 {
        return arg_err("at least one probe is required");
    }
    let loss = |s: &Session| -> Result<f64> { Ok(s.loss(x, y)?.total.to_scalar::<f64>()?) };
    let out = session.loss(x, y)?;
    let grads = out.total.backward()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names: Vec<&str> = session.store.iter().map(|(n, _)| n).filter(|n| *n != LOGITS_PARAM).collect();
    names.shuffle(&mut rng);
    if session.store.get(LOGITS_PARAM).is_some() {
        names.insert(0, LOGITS_PARAM);
    }
    let mut probes = Vec::with_capacity(num_probes);
    for k in 0..num_probes {
        let name = names[k % names.len()];
        let var = session.store.get(name).expect("name taken from the store");
        let original = var.as_tensor().copy()?;
        let flat = original.flatten_all()?.to_vec1::<f64>()?;
        let index = rng.random_range(0..flat.len());
        let analytic = match grads.get(var.as_tensor()) {
            Some(g) => g.flatten_all()?.to_vec1::<f64>()?[index],
            None => 0.0,
        };
        let rms = (flat.iter().map(|v| v * v).sum::<f64>() / flat.len() as f64).sqrt();
        let h = if rms > 0.0 { STEP * rms } else { STEP };
        let eval_at = |delta: f64| -> Result<f64> {
            let mut data = flat.clone();
            data[index] += delta;
            var.set(&Tensor::from_vec(data, original.dims(), &device())?)?;
            loss(session)
        };
        let plus = eval_at(h)?;
        let minus = eval_at(-h)?;
        var.set(&original)?;
        let numeric = (plus - minus) / (2.0 * h);
        probes.push(GradProbe {
            param: name.to_string(),
            index,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric),
        });
    }
    let frozen = match session.objective.provider() {
        Some(p) => p
            .parameters()
            .into_iter()
            .map(|(name, t)| {
                let max_abs_grad = match grads.get(&t) {
                    Some(g) => g.abs()?.max_all()?.to_scalar::<f64>()?,
                    None => 0.0,
                };
                Ok(FrozenProbe {
                    param: format!("provider.{name}"),
                    max_abs_grad,
                })
            })
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    let max_rel_error = probes.iter().map(|p| p.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        setting: session.config.injection.setting,
        probes,
        frozen,
        max_rel_error,
    })
}

/// H=4, depth=2 model with a 5-layer, 8-dim toy provider. Conditioning
/// uses a learned selection so its logits are trainable.
pub fn tiny_session(setting: Setting, seed: u64) -> Result<Session> {
    let selection = if setting == Setting::Conditioning { LayerMode::Learned } else { LayerMode::Fixed { layer: 4 } };
    let cfg = TrainConfig {
        seed,
        injection: InjectionSpec {
            selection,
            lambda: 0.1,
            bridge_seed: seed,
            ..InjectionSpec::new(setting)
        },
        model: DemucsConfig::tiny(),
        provider: ProviderConfig {
            toy: ToyProviderConfig {
                hidden_layers: 4,
                dim: 8,
                seed,
                ..Default::default()
            },
            ..Default::default()
        },
        ..Default::default()
    };
    let session = Session::new(&cfg)?;
    if let Some(logits) = session.objective.selection().and_then(|s| s.logits()) {
        // Move off the uniform point so the check is generic.
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let n = logits.dim(0)?;
        let v: Vec<f64> = (0..n).map(|_| r.random_range(-0.5..0.5)).collect();
        logits.set(&Tensor::from_vec(v, n, &device())?)?;
    }
    Ok(session)
}

/// A (1, len) noisy/clean pair of smooth tones plus noise.
pub fn tiny_batch(len: usize, seed: u64) -> Result<(Tensor, Tensor)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f1 = rng.random_range(0.02..0.08);
    let f2 = rng.random_range(0.1..0.3);
    let y: Vec<f64> = (0..len)
        .map(|i| 0.4 * (i as f64 * f1).sin() + 0.2 * (i as f64 * f2).cos())
        .collect();
    let x: Vec<f64> = y.iter().map(|v| v + rng.random_range(-0.15..0.15)).collect();
    Ok((
        Tensor::from_vec(x, (1, len), &device())?,
        Tensor::from_vec(y, (1, len), &device())?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_setting_small_check() {
        let s = tiny_session(Setting::Base, 1).unwrap();
        let (x, y) = tiny_batch(512, 1).unwrap();
        let r = gradient_check(&s, &x, &y, 6, 2).unwrap();
        assert_eq!(r.probes.len(), 6);
        assert!(r.max_rel_error < 1e-3, "{:#?}", r.probes);
        assert!(r.frozen.is_empty());
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.001) - 0.001 / 1.001).abs() < 1e-15);
    }
}
