//! Building blocks of the enhancer.
//!
//! Transposed convolutions are expressed as zero-stuffing followed by a
//! regular convolution so that every op in the graph has a backward pass.

use candle_core::{Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use crate::error::Result;
use crate::device;

pub(crate) fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(x.affine(0.5, 0.0)?.tanh()?.affine(0.5, 0.5)?)
}

/// Gated linear unit over the channel dimension of (B, 2C, L).
pub(crate) fn glu(x: &Tensor) -> Result<Tensor> {
    let c = x.dim(1)? / 2;
    let a = x.narrow(1, 0, c)?;
    let b = x.narrow(1, c, c)?;
    Ok((a * sigmoid(&b)?)?)
}

pub(crate) fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Ok(Tensor::from_vec(data, shape, &device())?)
}

fn std_dev(v: &[f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

/// 1-D convolution with bias; weight (C_out, C_in, K).
#[derive(Debug, Clone)]
pub(crate) struct Conv {
    pub weight: Var,
    pub bias: Var,
    pub stride: usize,
}

impl Conv {
    /// Uniform fan-in init, then scaled so the weight std moves towards
    /// `rescale` (square-root rule); `rescale <= 0` disables the rescaling.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        rng: &mut ChaCha8Rng,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        rescale: f64,
    ) -> Result<Self> {
        let bound = 1.0 / ((c_in * kernel) as f64).sqrt();
        let mut w = uniform(rng, &[c_out, c_in, kernel], bound)?;
        let mut b = uniform(rng, &[c_out], bound)?;
        if rescale > 0.0 {
            let std = std_dev(&w.flatten_all()?.to_vec1::<f64>()?);
            let scale = (std / rescale).sqrt();
            w = (w / scale)?;
            b = (b / scale)?;
        }
        Ok(Self {
            weight: store.add(format!("{name}.weight"), w)?,
            bias: store.add(format!("{name}.bias"), b)?,
            stride,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv1d(&self.weight, 0, self.stride, 1, 1)?;
        let c = self.bias.dim(0)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, c, 1))?)?)
    }

    /// Transposed convolution: output length `(L - 1) * stride + K`.
    pub fn forward_transposed(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, l) = x.dims3()?;
        let k = self.weight.dim(2)?;
        let s = self.stride;
        let stuffed = if s == 1 {
            x.clone()
        } else {
            let zeros = Tensor::zeros((b, c, l, s - 1), x.dtype(), x.device())?;
            Tensor::cat(&[&x.unsqueeze(3)?, &zeros], 3)?
                .reshape((b, c, l * s))?
                .narrow(2, 0, (l - 1) * s + 1)?
        };
        let y = stuffed
            .pad_with_zeros(2, k - 1, k - 1)?
            .conv1d(&self.weight, 0, 1, 1, 1)?;
        let co = self.bias.dim(0)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, co, 1))?)?)
    }
}

/// Fully connected map over the last dimension; weight (out, in).
#[derive(Debug, Clone)]
pub(crate) struct Linear {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, rng: &mut ChaCha8Rng, c_in: usize, c_out: usize) -> Result<Self> {
        let bound = 1.0 / (c_in as f64).sqrt();
        Ok(Self {
            weight: store.add(format!("{name}.weight"), uniform(rng, &[c_out, c_in], bound)?)?,
            bias: store.add(format!("{name}.bias"), uniform(rng, &[c_out], bound)?)?,
        })
    }

    /// x: (rows, in) -> (rows, out)
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }
}

#[derive(Debug, Clone)]
struct LstmDirection {
    w_ih: Var,
    w_hh: Var,
    b_ih: Var,
    b_hh: Var,
}

impl LstmDirection {
    fn new(store: &mut ParamStore, name: &str, rng: &mut ChaCha8Rng, input: usize, hidden: usize) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        Ok(Self {
            w_ih: store.add(format!("{name}.w_ih"), uniform(rng, &[4 * hidden, input], bound)?)?,
            w_hh: store.add(format!("{name}.w_hh"), uniform(rng, &[4 * hidden, hidden], bound)?)?,
            b_ih: store.add(format!("{name}.b_ih"), uniform(rng, &[4 * hidden], bound)?)?,
            b_hh: store.add(format!("{name}.b_hh"), uniform(rng, &[4 * hidden], bound)?)?,
        })
    }

    /// x: (B, F, in) -> (B, F, H). Gate order: input, forget, cell, output.
    fn run(&self, x: &Tensor, reverse: bool) -> Result<Tensor> {
        let (b, frames, input) = x.dims3()?;
        let h4 = self.w_hh.dim(0)?;
        let hidden = h4 / 4;
        let bias = (self.b_ih.as_tensor() + self.b_hh.as_tensor())?;
        let xw = x
            .reshape((b * frames, input))?
            .matmul(&self.w_ih.t()?)?
            .broadcast_add(&bias)?
            .reshape((b, frames, h4))?;
        let w_hh_t = self.w_hh.t()?.contiguous()?;
        let mut h: Option<Tensor> = None;
        let mut c: Option<Tensor> = None;
        let mut outs: Vec<Option<Tensor>> = vec![None; frames];
        let order: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..frames).rev())
        } else {
            Box::new(0..frames)
        };
        for t in order {
            let mut gates = xw.narrow(1, t, 1)?.squeeze(1)?;
            if let Some(h) = &h {
                gates = (gates + h.matmul(&w_hh_t)?)?;
            }
            let s = sigmoid(&gates)?;
            let i = s.narrow(1, 0, hidden)?;
            let f = s.narrow(1, hidden, hidden)?;
            let o = s.narrow(1, 3 * hidden, hidden)?;
            let g = gates.narrow(1, 2 * hidden, hidden)?.tanh()?;
            let ig = (i * g)?;
            let c_new = match &c {
                Some(c) => ((f * c)? + ig)?,
                None => ig,
            };
            let h_new = (o * c_new.tanh()?)?;
            outs[t] = Some(h_new.clone());
            h = Some(h_new);
            c = Some(c_new);
        }
        let outs: Vec<Tensor> = outs.into_iter().map(|o| o.expect("every step visited")).collect();
        Ok(Tensor::stack(&outs, 1)?)
    }
}

/// Multi-layer LSTM; bidirectional stacks concatenate both directions and
/// project back to `hidden` channels at the end.
#[derive(Debug, Clone)]
pub(crate) struct Lstm {
    layers: Vec<Vec<LstmDirection>>,
    linear: Option<Linear>,
}

impl Lstm {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        rng: &mut ChaCha8Rng,
        dim: usize,
        num_layers: usize,
        bidirectional: bool,
    ) -> Result<Self> {
        let dirs = if bidirectional { 2 } else { 1 };
        let mut layers = Vec::with_capacity(num_layers);
        for l in 0..num_layers {
            let input = if l == 0 { dim } else { dim * dirs };
            let mut d = vec![LstmDirection::new(store, &format!("{name}.l{l}.fwd"), rng, input, dim)?];
            if bidirectional {
                d.push(LstmDirection::new(store, &format!("{name}.l{l}.bwd"), rng, input, dim)?);
            }
            layers.push(d);
        }
        let linear = if bidirectional {
            Some(Linear::new(store, &format!("{name}.linear"), rng, 2 * dim, dim)?)
        } else {
            None
        };
        Ok(Self { layers, linear })
    }

    /// x: (B, F, C) -> (B, F, C)
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in &self.layers {
            let fwd = layer[0].run(&h, false)?;
            h = match layer.get(1) {
                Some(bwd) => Tensor::cat(&[&fwd, &bwd.run(&h, true)?], 2)?,
                None => fwd,
            };
        }
        match &self.linear {
            Some(lin) => {
                let (b, f, c) = h.dims3()?;
                let y = lin.forward(&h.reshape((b * f, c))?)?;
                Ok(y.reshape((b, f, c / 2))?)
            }
            None => Ok(h),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn transposed_conv_matches_direct_scatter() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = Conv::new(&mut store, "t", &mut rng, 2, 3, 4, 2, 0.0).unwrap();
        let x = uniform(&mut rng, &[1, 2, 5], 1.0).unwrap();
        let y = conv.forward_transposed(&x).unwrap();
        assert_eq!(y.dims(), &[1, 3, 12]);
        // out[co, j*s + k] += x[ci, j] * w[co, ci, K-1-k] under the flipped-kernel parameterization.
        let w = conv.weight.as_tensor().to_vec3::<f64>().unwrap();
        let b = conv.bias.as_tensor().to_vec1::<f64>().unwrap();
        let xv = x.to_vec3::<f64>().unwrap();
        let mut expect = vec![vec![0.0; 12]; 3];
        for co in 0..3 {
            expect[co].iter_mut().for_each(|v| *v = b[co]);
            for ci in 0..2 {
                for j in 0..5 {
                    for k in 0..4 {
                        expect[co][j * 2 + k] += xv[0][ci][j] * w[co][ci][3 - k];
                    }
                }
            }
        }
        let got = y.to_vec3::<f64>().unwrap();
        for co in 0..3 {
            for p in 0..12 {
                assert!((got[0][co][p] - expect[co][p]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lstm_shapes() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lstm = Lstm::new(&mut store, "lstm", &mut rng, 6, 2, true).unwrap();
        let x = uniform(&mut rng, &[2, 7, 6], 1.0).unwrap();
        assert_eq!(lstm.forward(&x).unwrap().dims(), &[2, 7, 6]);
        // 2 layers x 2 directions x 4 tensors + linear
        assert_eq!(store.len(), 18);
    }
}
