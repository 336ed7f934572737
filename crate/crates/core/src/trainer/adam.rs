use candle_core::backprop::GradStore;
use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::config::AdamConfig;
use crate::error::{config_err, Result};
use crate::model::{NamedArray, ParamStore};

/// Adam with bias correction. Parameters without a gradient in a step are
/// left untouched, moments included.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    t: u64,
    /// Per parameter, in store order.
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<NamedArray>,
    pub v: Vec<NamedArray>,
}

impl Adam {
    pub fn new(cfg: &AdamConfig, store: &ParamStore) -> Result<Self> {
        let zeros = store
            .iter()
            .map(|(_, v)| Ok(v.as_tensor().zeros_like()?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            t: 0,
            m: zeros.clone(),
            v: zeros,
        })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Step size for the current step.
    pub fn lr(&self) -> f64 {
        match self.cfg.decay_steps {
            Some(n) => {
                let done = self.t.saturating_sub(1).min(n) as f64;
                self.cfg.lr * (1.0 - done / n as f64)
            }
            None => self.cfg.lr,
        }
    }

    pub fn step(&mut self, store: &ParamStore, grads: &GradStore) -> Result<()> {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps, .. } = self.cfg;
        let lr = self.lr();
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let norm = grad_norm(store, grads)?;
        log::debug!("step {} gradient norm {norm:.6e}", self.t);
        let scale = match self.cfg.max_grad_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        for (i, (_, var)) in store.iter().enumerate() {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            // Gradients carry their own graph; keeping it in the moments
            // would retain every past step's graph.
            let g = &(g.detach() * scale)?;
            let m = ((&self.m[i] * beta1)? + (g * (1.0 - beta1))?)?;
            let v = ((&self.v[i] * beta2)? + (g.sqr()? * (1.0 - beta2))?)?;
            let update = ((&m / c1)? / ((&v / c2)?.sqrt()? + eps)?)?;
            var.set(&(var.as_tensor().detach() - (update * lr)?)?)?;
            self.m[i] = m;
            self.v[i] = v;
        }
        Ok(())
    }

    pub fn state(&self, store: &ParamStore) -> Result<AdamState> {
        let names: Vec<&str> = store.iter().map(|(n, _)| n).collect();
        let pack = |ts: &[Tensor]| {
            names
                .iter()
                .zip(ts)
                .map(|(n, t)| NamedArray::from_tensor(n, t))
                .collect::<Result<Vec<_>>>()
        };
        Ok(AdamState {
            t: self.t,
            m: pack(&self.m)?,
            v: pack(&self.v)?,
        })
    }

    pub fn load_state(&mut self, store: &ParamStore, state: &AdamState) -> Result<()> {
        if state.m.len() != store.len() || state.v.len() != store.len() {
            return config_err("optimizer state does not match the parameter set");
        }
        for (i, (name, var)) in store.iter().enumerate() {
            for arr in [&state.m[i], &state.v[i]] {
                if arr.name != name || arr.shape != var.dims() {
                    return config_err(format!("optimizer state entry `{}` does not match `{name}`", arr.name));
                }
            }
            self.m[i] = state.m[i].to_tensor()?;
            self.v[i] = state.v[i].to_tensor()?;
        }
        self.t = state.t;
        Ok(())
    }
}

/// Global L2 norm over every parameter that received a gradient.
pub fn grad_norm(store: &ParamStore, grads: &GradStore) -> Result<f64> {
    let mut sq = 0.0;
    for (_, var) in store.iter() {
        if let Some(g) = grads.get(var.as_tensor()) {
            sq += g.sqr()?.sum_all()?.to_scalar::<f64>()?;
        }
    }
    Ok(sq.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::new(&[1.0f64, -2.0, 0.5], &device()).unwrap()).unwrap();
        let cfg = AdamConfig { lr: 0.1, ..Default::default() };
        let mut adam = Adam::new(&cfg, &store).unwrap();
        // loss = sum(w^2 * c) with c of mixed scale: Adam normalizes magnitude.
        let c = Tensor::new(&[1.0f64, 100.0, 0.01], &device()).unwrap();
        let loss = (w.as_tensor().sqr().unwrap() * &c).unwrap().sum_all().unwrap();
        adam.step(&store, &loss.backward().unwrap()).unwrap();
        let got = w.as_tensor().to_vec1::<f64>().unwrap();
        for (g, want) in got.iter().zip([0.9, -1.9, 0.4]) {
            assert!((g - want).abs() < 1e-6, "{got:?}");
        }
    }

    #[test]
    fn linear_decay_reaches_zero() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::new(&[1.0f64], &device()).unwrap()).unwrap();
        let cfg = AdamConfig { lr: 0.4, decay_steps: Some(4), ..Default::default() };
        let mut adam = Adam::new(&cfg, &store).unwrap();
        let mut seen = Vec::new();
        for _ in 0..6 {
            let loss = w.as_tensor().sqr().unwrap().sum_all().unwrap();
            adam.t += 1;
            seen.push(adam.lr());
            adam.t -= 1;
            adam.step(&store, &loss.backward().unwrap()).unwrap();
        }
        let want = [0.4, 0.3, 0.2, 0.1, 0.0, 0.0];
        for (g, w) in seen.iter().zip(want) {
            assert!((g - w).abs() < 1e-12, "{seen:?}");
        }
    }

    #[test]
    fn clipping_matches_prescaled_gradient() {
        // A large eps makes the step depend on gradient scale, so clipping
        // shows up in the update.
        let run = |clip: Option<f64>, pre: f64| {
            let mut store = ParamStore::new();
            let w = store.add("w", Tensor::new(&[3.0f64, -4.0], &device()).unwrap()).unwrap();
            let cfg = AdamConfig { lr: 0.1, eps: 1.0, max_grad_norm: clip, ..Default::default() };
            let mut adam = Adam::new(&cfg, &store).unwrap();
            // Gradient of sum(w^2 / 2) * pre is w * pre, norm 5 * pre.
            let loss = (w.as_tensor().sqr().unwrap().sum_all().unwrap() * (0.5 * pre)).unwrap();
            let grads = loss.backward().unwrap();
            assert!((grad_norm(&store, &grads).unwrap() - 5.0 * pre).abs() < 1e-12);
            adam.step(&store, &grads).unwrap();
            w.as_tensor().to_vec1::<f64>().unwrap()
        };
        let close = |a: Vec<f64>, b: Vec<f64>| a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12);
        assert!(close(run(Some(1.0), 1.0), run(None, 0.2)));
        assert!(close(run(Some(10.0), 1.0), run(None, 1.0)));
    }

    #[test]
    fn state_round_trip() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::new(&[1.0f64, 2.0], &device()).unwrap()).unwrap();
        let mut adam = Adam::new(&AdamConfig::default(), &store).unwrap();
        for _ in 0..3 {
            let loss = w.as_tensor().sqr().unwrap().sum_all().unwrap();
            adam.step(&store, &loss.backward().unwrap()).unwrap();
        }
        let st = adam.state(&store).unwrap();
        let mut other = Adam::new(&AdamConfig::default(), &store).unwrap();
        other.load_state(&store, &st).unwrap();
        assert_eq!(other.state(&store).unwrap(), st);
        assert_eq!(other.steps(), 3);
    }
}
