use candle_core::{Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{glu, uniform, Conv, Lstm};
use super::params::ParamStore;
use super::{DemucsConfig, NORMALIZE_FLOOR};
use crate::audio::{downsample_tensor, interpolate_time_tensor, upsample_tensor};
use crate::error::{config_err, Error, Result};
use crate::device;

#[derive(Debug, Clone)]
struct EncoderLayer {
    conv: Conv,
    pointwise: Conv,
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    pointwise: Conv,
    /// Stored directly in convolution layout over the zero-stuffed input,
    /// which is a reparameterization of the usual transposed kernel.
    convtr: Conv,
    relu: bool,
}

/// Concatenates time-aligned phonetic features with the encoder output and
/// maps back to the bottleneck width: weight (C, C + d).
#[derive(Debug, Clone)]
struct ConditioningProjection {
    weight: Var,
    bias: Var,
    feature_dim: usize,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Enhanced waveform, (B, T).
    pub output: Tensor,
    /// e_0 (upsampled input) through e_depth, each (B, C_i, F_i).
    pub taps: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct Demucs {
    cfg: DemucsConfig,
    encoder: Vec<EncoderLayer>,
    /// Deepest layer first.
    decoder: Vec<DecoderLayer>,
    lstm: Lstm,
    conditioning: Option<ConditioningProjection>,
}

impl Demucs {
    /// Builds a model registering its parameters in `store`. The
    /// conditioning projection, when requested, is created last so the
    /// remaining parameters do not depend on whether it exists.
    pub fn new(cfg: &DemucsConfig, cond_dim: Option<usize>, seed: u64, store: &mut ParamStore) -> Result<Self> {
        cfg.validate()?;
        if cond_dim.is_some() && cfg.causal {
            return config_err("conditioning requires non-causal setup");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (k, s) = (cfg.kernel, cfg.stride);
        let mut encoder = Vec::with_capacity(cfg.depth);
        for i in 1..=cfg.depth {
            let (ci, co) = (cfg.channels(i - 1), cfg.channels(i));
            encoder.push(EncoderLayer {
                conv: Conv::new(store, &format!("encoder.{i}.conv"), &mut rng, ci, co, k, s, cfg.rescale)?,
                pointwise: Conv::new(store, &format!("encoder.{i}.pointwise"), &mut rng, co, 2 * co, 1, 1, cfg.rescale)?,
            });
        }
        let mut decoder = Vec::with_capacity(cfg.depth);
        for i in (1..=cfg.depth).rev() {
            let (ci, co) = (cfg.channels(i), cfg.channels(i - 1));
            decoder.push(DecoderLayer {
                pointwise: Conv::new(store, &format!("decoder.{i}.pointwise"), &mut rng, ci, 2 * ci, 1, 1, cfg.rescale)?,
                convtr: Conv::new(store, &format!("decoder.{i}.convtr"), &mut rng, ci, co, k, s, cfg.rescale)?,
                relu: i > 1,
            });
        }
        let c = cfg.bottleneck_channels();
        let lstm = Lstm::new(store, "lstm", &mut rng, c, cfg.lstm_layers, !cfg.causal)?;
        let conditioning = match cond_dim {
            Some(d) => {
                // Identity on the bottleneck block, small random weights on the features.
                let bound = 1.0 / ((c + d) as f64).sqrt();
                let feat = uniform(&mut rng, &[c, d], bound)?;
                let eye = Tensor::eye(c, crate::DTYPE, &device())?;
                let weight = Tensor::cat(&[&eye, &feat], 1)?;
                Some(ConditioningProjection {
                    weight: store.add("conditioning.weight", weight)?,
                    bias: store.add("conditioning.bias", Tensor::zeros(c, crate::DTYPE, &device())?)?,
                    feature_dim: d,
                })
            }
            None => None,
        };
        Ok(Self {
            cfg: cfg.clone(),
            encoder,
            decoder,
            lstm,
            conditioning,
        })
    }

    pub fn config(&self) -> &DemucsConfig {
        &self.cfg
    }

    pub fn conditioning_dim(&self) -> Option<usize> {
        self.conditioning.as_ref().map(|c| c.feature_dim)
    }

    /// Sets the conditioning projection to pass the bottleneck through
    /// unchanged and ignore the features.
    pub fn set_conditioning_identity(&self) -> Result<()> {
        let Some(p) = &self.conditioning else {
            return config_err("model has no conditioning projection");
        };
        let c = self.cfg.bottleneck_channels();
        let eye = Tensor::eye(c, crate::DTYPE, &device())?;
        let zeros = Tensor::zeros((c, p.feature_dim), crate::DTYPE, &device())?;
        p.weight.set(&Tensor::cat(&[&eye, &zeros], 1)?)?;
        p.bias.set(&Tensor::zeros(c, crate::DTYPE, &device())?)?;
        Ok(())
    }

    /// Zeroes the feature block of the conditioning projection only.
    pub fn zero_conditioning_features(&self) -> Result<()> {
        let Some(p) = &self.conditioning else {
            return config_err("model has no conditioning projection");
        };
        let c = self.cfg.bottleneck_channels();
        let keep = p.weight.narrow(1, 0, c)?;
        let zeros = Tensor::zeros((c, p.feature_dim), crate::DTYPE, &device())?;
        p.weight.set(&Tensor::cat(&[&keep, &zeros], 1)?)?;
        Ok(())
    }

    /// Zeroes the outermost transposed convolution, forcing a silent output.
    pub fn zero_output_layer(&self) -> Result<()> {
        let last = self.decoder.last().expect("depth >= 1");
        last.convtr.weight.set(&last.convtr.weight.zeros_like()?)?;
        last.convtr.bias.set(&last.convtr.bias.zeros_like()?)?;
        Ok(())
    }

    /// x: (B, T) noisy waveform; cond: optional (B, T', d) phonetic features.
    pub fn forward(&self, x: &Tensor, cond: Option<&Tensor>) -> Result<ForwardOutput> {
        let (b, len) = x.dims2()?;
        let cfg = &self.cfg;
        if cond.is_some() && cfg.causal {
            return config_err("conditioning requires non-causal setup");
        }
        if cond.is_some() && self.conditioning.is_none() {
            return config_err("model was built without a conditioning projection");
        }
        let (x, scale) = if cfg.normalize && !cfg.causal {
            let mean = x.mean_keepdim(1)?;
            let var = x.broadcast_sub(&mean)?.sqr()?.mean_keepdim(1)?;
            let sd = (var.sqrt()? + NORMALIZE_FLOOR)?;
            (x.broadcast_div(&sd)?, Some(sd))
        } else {
            (x.clone(), None)
        };
        let valid = cfg.valid_length(len);
        let x = x.pad_with_zeros(1, 0, valid - len)?;
        let up = upsample_tensor(&x, cfg.upscale)?;
        let mut h = up.reshape((b, 1, valid * cfg.upscale))?;
        let (pl, pr) = cfg.conv_padding();
        let mut taps = vec![h.clone()];
        for layer in &self.encoder {
            h = layer.conv.forward(&h.pad_with_zeros(2, pl, pr)?)?.relu()?;
            h = glu(&layer.pointwise.forward(&h)?)?;
            taps.push(h.clone());
        }
        if let (Some(feat), Some(proj)) = (cond, &self.conditioning) {
            let (fb, _, fd) = feat.dims3()?;
            if fb != b || fd != proj.feature_dim {
                return config_err(format!(
                    "conditioning features have shape {:?}, expected ({b}, _, {})",
                    feat.dims(),
                    proj.feature_dim
                ));
            }
            let frames = h.dim(2)?;
            let aligned = interpolate_time_tensor(feat, frames)?;
            if aligned.dim(1)? != frames {
                return Err(Error::Internal("feature interpolation produced wrong frame count".into()));
            }
            let cat = Tensor::cat(&[&h, &aligned.transpose(1, 2)?], 1)?;
            let (_, cd) = proj.weight.dims2()?;
            let kernel = proj.weight.reshape((cd - proj.feature_dim, cd, 1))?;
            let c = cd - proj.feature_dim;
            h = cat
                .conv1d(&kernel, 0, 1, 1, 1)?
                .broadcast_add(&proj.bias.reshape((1, c, 1))?)?;
        }
        h = self.lstm.forward(&h.transpose(1, 2)?.contiguous()?)?.transpose(1, 2)?;
        for (layer, skip) in self.decoder.iter().zip(taps.iter().skip(1).rev()) {
            h = (h + skip)?;
            h = glu(&layer.pointwise.forward(&h)?)?;
            let frames = h.dim(2)?;
            h = layer.convtr.forward_transposed(&h)?;
            // Causal models keep the leading samples so no output depends on
            // frames that start after it.
            let crop = if cfg.causal { 0 } else { pl };
            h = h.narrow(2, crop, frames * cfg.stride)?;
            if layer.relu {
                h = h.relu()?;
            }
        }
        let y = h.reshape((b, valid * cfg.upscale))?;
        let y = downsample_tensor(&y, cfg.upscale)?.narrow(1, 0, len)?;
        let output = match scale {
            Some(sd) => y.broadcast_mul(&sd)?,
            None => y,
        };
        Ok(ForwardOutput { output, taps })
    }

    /// Convenience inference on plain samples.
    pub fn enhance(&self, samples: &[f64], cond: Option<&Tensor>) -> Result<Vec<f64>> {
        let x = Tensor::from_slice(samples, (1, samples.len()), &device())?;
        Ok(self.forward(&x, cond)?.output.flatten_all()?.to_vec1::<f64>()?)
    }
}
