use std::fmt::Write;

use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use super::LayeredFeatures;
use crate::error::{arg_err, Result};
use crate::model::ParamStore;
use crate::{device, DTYPE};

pub const LOGITS_PARAM: &str = "selection.logits";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum LayerMode {
    Fixed { layer: usize },
    Mean,
    Learned,
}

impl Default for LayerMode {
    fn default() -> Self {
        LayerMode::Fixed { layer: 6 }
    }
}

impl LayerMode {
    /// Row label used in layer-selection reports.
    pub fn label(&self, num_layers: usize) -> String {
        let last = num_layers.saturating_sub(1);
        match self {
            LayerMode::Fixed { layer } => layer.to_string(),
            LayerMode::Mean => format!("Avg(0-{last})"),
            LayerMode::Learned => format!("Lrn-W-Avg(0-{last})"),
        }
    }
}

/// How provider layers are combined into one (B, T', d) sequence.
#[derive(Debug, Clone)]
pub struct LayerSelection {
    mode: LayerMode,
    num_layers: usize,
    /// Learned mode only; initialized to zeros (uniform weights).
    logits: Option<Var>,
}

impl LayerSelection {
    pub fn new(mode: LayerMode, num_layers: usize, store: Option<&mut ParamStore>) -> Result<Self> {
        if num_layers == 0 {
            return arg_err("layer selection needs at least one layer");
        }
        let logits = match mode {
            LayerMode::Fixed { layer } if layer >= num_layers => {
                return arg_err(format!("layer {layer} out of range for {num_layers} layers"));
            }
            LayerMode::Learned => {
                let zeros = Tensor::zeros(num_layers, DTYPE, &device())?;
                Some(match store {
                    Some(store) => store.add(LOGITS_PARAM, zeros)?,
                    None => Var::from_tensor(&zeros)?,
                })
            }
            _ => None,
        };
        Ok(Self {
            mode,
            num_layers,
            logits,
        })
    }

    pub fn mode(&self) -> LayerMode {
        self.mode
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn logits(&self) -> Option<&Var> {
        self.logits.as_ref()
    }

    pub fn set_logits(&self, values: &[f64]) -> Result<()> {
        let Some(var) = &self.logits else {
            return arg_err("only learned selections have logits");
        };
        if values.len() != self.num_layers {
            return arg_err(format!("expected {} logits, got {}", self.num_layers, values.len()));
        }
        var.set(&Tensor::from_slice(values, self.num_layers, &device())?)?;
        Ok(())
    }

    /// Softmax over the logits; one-hot or uniform for the other modes.
    fn weight_tensor(&self) -> Result<Tensor> {
        let n = self.num_layers;
        Ok(match (&self.mode, &self.logits) {
            (LayerMode::Learned, Some(l)) => {
                let max = l.max(0)?.to_scalar::<f64>()?;
                let e = (l.as_tensor() - max)?.exp()?;
                e.broadcast_div(&e.sum_keepdim(0)?)?
            }
            (LayerMode::Fixed { layer }, _) => {
                let mut w = vec![0.0; n];
                w[*layer] = 1.0;
                Tensor::from_vec(w, n, &device())?
            }
            _ => Tensor::from_vec(vec![1.0 / n as f64; n], n, &device())?,
        })
    }

    pub fn weights(&self) -> Result<Vec<f64>> {
        Ok(self.weight_tensor()?.to_vec1::<f64>()?)
    }

    /// Combined (B, T', d) features; learned weights stay in the graph so
    /// the logits receive gradients.
    pub fn select(&self, features: &LayeredFeatures) -> Result<Tensor> {
        if features.num_layers() != self.num_layers {
            return arg_err(format!(
                "selection built for {} layers, features have {}",
                self.num_layers,
                features.num_layers()
            ));
        }
        if let LayerMode::Fixed { layer } = self.mode {
            return Ok(features.layers()[layer].clone());
        }
        let w = self.weight_tensor()?;
        let stacked = Tensor::stack(features.layers(), 0)?;
        Ok(stacked
            .broadcast_mul(&w.reshape((self.num_layers, 1, 1, 1))?)?
            .sum(0)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerWeight {
    pub layer: usize,
    pub weight: f64,
}

/// Learned per-layer weights (softmax of the stored logits).
pub fn report_layer_weights(sel: &LayerSelection) -> Result<Vec<LayerWeight>> {
    if sel.mode() != LayerMode::Learned {
        return arg_err("layer weights are only defined for learned selection");
    }
    Ok(sel
        .weights()?
        .into_iter()
        .enumerate()
        .map(|(layer, weight)| LayerWeight { layer, weight })
        .collect())
}

pub fn layer_weights_csv(weights: &[LayerWeight]) -> String {
    let mut s = String::from("layer,weight\n");
    for w in weights {
        let _ = writeln!(s, "{},{}", w.layer, w.weight);
    }
    s
}

/// Horizontal-axis bar chart of the layer weights as a standalone SVG.
pub fn layer_weights_svg(weights: &[LayerWeight], title: &str) -> String {
    let (w, h, pad) = (640.0, 320.0, 40.0);
    let n = weights.len().max(1) as f64;
    let max = weights.iter().map(|l| l.weight).fold(0.0, f64::max).max(1e-12);
    let bar = (w - 2.0 * pad) / n;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    for (i, lw) in weights.iter().enumerate() {
        let bh = (h - 2.0 * pad - 20.0) * lw.weight / max;
        let x = pad + i as f64 * bar;
        let y = h - pad - bh;
        let _ = writeln!(
            s,
            r##"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{bh:.2}" fill="#7b4fa0"><title>{:.4}</title></rect>"##,
            bar * 0.8,
            lw.weight
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            x + bar * 0.4,
            h - pad + 14.0,
            lw.layer
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_layers(values: &[f64]) -> LayeredFeatures {
        let layers = values
            .iter()
            .map(|&v| Tensor::full(v, (1, 4, 3), &device()).unwrap())
            .collect();
        LayeredFeatures::new(layers).unwrap()
    }

    fn flat(t: &Tensor) -> Vec<f64> {
        t.flatten_all().unwrap().to_vec1::<f64>().unwrap()
    }

    #[test]
    fn weighted_constants() {
        let feats = constant_layers(&[1.0, 2.0, 3.0]);
        let sel = LayerSelection::new(LayerMode::Learned, 3, None).unwrap();
        let w: [f64; 3] = [0.2, 0.3, 0.5];
        sel.set_logits(&w.map(f64::ln)).unwrap();
        for v in flat(&sel.select(&feats).unwrap()) {
            assert!((v - 2.3).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_logits_pick_one_layer() {
        let feats = constant_layers(&[1.0, 2.0, 3.0, 4.0]);
        let sel = LayerSelection::new(LayerMode::Learned, 4, None).unwrap();
        sel.set_logits(&[0.0, 0.0, 20.0, 0.0]).unwrap();
        let fixed = LayerSelection::new(LayerMode::Fixed { layer: 2 }, 4, None).unwrap();
        let a = flat(&sel.select(&feats).unwrap());
        let b = flat(&fixed.select(&feats).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn uniform_logits_equal_mean_exactly() {
        let feats = LayeredFeatures::new(
            (0..5)
                .map(|i| Tensor::from_vec((0..6).map(|j| (i * 7 + j) as f64 * 0.13).collect(), (1, 2, 3), &device()).unwrap())
                .collect(),
        )
        .unwrap();
        let learned = LayerSelection::new(LayerMode::Learned, 5, None).unwrap();
        let mean = LayerSelection::new(LayerMode::Mean, 5, None).unwrap();
        assert_eq!(flat(&learned.select(&feats).unwrap()), flat(&mean.select(&feats).unwrap()));
    }

    #[test]
    fn fixed_out_of_range_rejected() {
        assert!(LayerSelection::new(LayerMode::Fixed { layer: 5 }, 5, None).is_err());
    }

    #[test]
    fn report_requires_learned_and_sums_to_one() {
        let fixed = LayerSelection::new(LayerMode::Mean, 4, None).unwrap();
        assert!(report_layer_weights(&fixed).is_err());
        let sel = LayerSelection::new(LayerMode::Learned, 13, None).unwrap();
        let w = report_layer_weights(&sel).unwrap();
        assert!(w.iter().all(|l| (l.weight - 1.0 / 13.0).abs() < 1e-15));
        sel.set_logits(&(0..13).map(|i| (i as f64 * 0.37).sin() * 3.0).collect::<Vec<_>>()).unwrap();
        let w = report_layer_weights(&sel).unwrap();
        assert!((w.iter().map(|l| l.weight).sum::<f64>() - 1.0).abs() < 1e-12);
        let csv = layer_weights_csv(&w);
        assert_eq!(csv.lines().count(), 14);
        assert!(layer_weights_svg(&w, "weights").contains("<rect"));
    }
}
