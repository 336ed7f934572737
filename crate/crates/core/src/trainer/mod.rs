//! Optimization loop, checkpointing and gradient verification.
//!
//! The recipe defaults are batch 16, Adam (β = 0.9, 0.999) at a constant
//! 3e-4, no gradient clipping, and the best-validation checkpoint kept. A
//! single ChaCha8 stream drives shuffling and augmentation; it is saved in
//! every checkpoint so a resumed run continues bit-identically.

mod adam;
mod checkpoint;
mod config;
mod gradcheck;

pub use adam::{Adam, AdamState};
pub use checkpoint::{file_hash, Checkpoint, RngState, CHECKPOINT_FORMAT};
pub use config::{AdamConfig, DataConfig, ProviderConfig, TrainConfig, ENV_PREFIX};
pub use gradcheck::{gradient_check, tiny_batch, tiny_session, FrozenProbe, GradCheckReport, GradProbe};

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use candle_core::Tensor;
use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::augment::{augment_batch, load_pairs, segment_dataset, NoisyCleanPair, Split};
use crate::error::{arg_err, config_err, Error, Result};
use crate::model::{Demucs, NamedArray, ParamStore};
use crate::objectives::{LossBreakdown, LossOutput, Objective, Setting};
use crate::phonetic::PhoneticProvider;
use crate::device;

const BRIDGE_BUFFER: &str = "bridge";

/// A model, its parameters and the objective it is trained with.
#[derive(Debug, Clone)]
pub struct Session {
    pub config: TrainConfig,
    pub model: Demucs,
    pub store: ParamStore,
    pub objective: Objective,
}

impl Session {
    /// Validates the configuration and builds every component; the
    /// provider is only constructed when the setting uses one.
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let provider = if cfg.injection.setting.uses_provider() {
            Some(cfg.provider.build()?)
        } else {
            None
        };
        Self::with_provider(cfg, provider)
    }

    pub fn with_provider(cfg: &TrainConfig, provider: Option<Arc<dyn PhoneticProvider>>) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let cond_dim = match (cfg.injection.setting, &provider) {
            (Setting::Conditioning, Some(p)) => Some(p.feature_dim()),
            _ => None,
        };
        let model = Demucs::new(&cfg.model, cond_dim, cfg.seed, &mut store)?;
        let objective = Objective::new(&cfg.injection, &cfg.model, provider, &mut store)?;
        Ok(Self {
            config: cfg.clone(),
            model,
            store,
            objective,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut s = Self::new(&ckpt.config)?;
        s.store.load(&ckpt.params)?;
        for b in &ckpt.buffers {
            if b.name == BRIDGE_BUFFER {
                s.objective.set_bridge(b.to_tensor()?)?;
            }
        }
        Ok(s)
    }

    pub fn buffers(&self) -> Result<Vec<NamedArray>> {
        self.objective
            .bridge()
            .map(|b| NamedArray::from_tensor(BRIDGE_BUFFER, b))
            .into_iter()
            .collect()
    }

    /// Loss for a (B, T) batch of noisy inputs and clean targets.
    pub fn loss(&self, x: &Tensor, y: &Tensor) -> Result<LossOutput> {
        self.objective.compute(&self.model, x, y)
    }

    /// Enhances one utterance; conditioning models extract features from
    /// the noisy input.
    pub fn enhance(&self, noisy: &Waveform) -> Result<Waveform> {
        let x = Tensor::from_slice(noisy.samples(), (1, noisy.len()), &device())?;
        let cond = self.objective.conditioning_features(&x)?;
        let out = self.model.forward(&x, cond.as_ref())?.output;
        Waveform::new(out.flatten_all()?.to_vec1::<f64>()?, noisy.sample_rate())
    }
}

fn stack(items: &[NoisyCleanPair], noisy: bool) -> Result<Tensor> {
    let len = items[0].len();
    let mut data = Vec::with_capacity(items.len() * len);
    for p in items {
        data.extend_from_slice(if noisy { p.noisy.samples() } else { p.clean.samples() });
    }
    Ok(Tensor::from_vec(data, (items.len(), len), &device())?)
}

/// Result of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    pub steps: usize,
    /// Training total per step, this run only.
    pub step_losses: Vec<f64>,
    /// Validation total per epoch, this run only.
    pub valid_losses: Vec<f64>,
    pub best_valid: Option<f64>,
    pub last_checkpoint: PathBuf,
    pub best_checkpoint: Option<PathBuf>,
    pub metrics_log: PathBuf,
}

#[derive(Debug)]
pub struct Trainer {
    session: Session,
    adam: Adam,
    rng: ChaCha8Rng,
    epoch: usize,
    step: usize,
    best_valid: Option<f64>,
    train_items: Vec<NoisyCleanPair>,
    valid_items: Vec<NoisyCleanPair>,
}

impl Trainer {
    /// Loads and segments the manifest named in the config.
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let Some(manifest) = &cfg.data.manifest else {
            return config_err("data.manifest is not set");
        };
        let pairs = load_pairs(manifest, cfg.data.sample_rate)?;
        let (train, valid): (Vec<_>, Vec<_>) = pairs.into_iter().partition(|(_, s)| *s == Split::Train);
        let train: Vec<_> = train.into_iter().map(|(p, _)| p).collect();
        let valid: Vec<_> = valid.into_iter().filter(|(_, s)| *s == Split::Valid).map(|(p, _)| p).collect();
        Self::with_data(cfg, train, valid)
    }

    /// Training pairs are segmented per the config; validation pairs are
    /// used whole. Without validation pairs the training pairs stand in.
    pub fn with_data(cfg: &TrainConfig, train: Vec<NoisyCleanPair>, valid: Vec<NoisyCleanPair>) -> Result<Self> {
        let session = Session::new(cfg)?;
        Self::with_session(session, train, valid)
    }

    pub fn with_session(session: Session, train: Vec<NoisyCleanPair>, valid: Vec<NoisyCleanPair>) -> Result<Self> {
        let cfg = &session.config;
        if train.is_empty() {
            return arg_err("no training utterances");
        }
        if let Some(p) = train.iter().chain(&valid).find(|p| p.sample_rate() != cfg.data.sample_rate) {
            return arg_err(format!("{} is at {} Hz, pipeline rate is {}", p.id, p.sample_rate(), cfg.data.sample_rate));
        }
        let valid = if valid.is_empty() { train.clone() } else { valid };
        let train_items = segment_dataset(&train, cfg.data.segment_s, cfg.data.stride_s)?;
        let adam = Adam::new(&cfg.optimizer, &session.store)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(cfg.data.augment.seed);
        Ok(Self {
            session,
            adam,
            rng,
            epoch: 0,
            step: 0,
            best_valid: None,
            train_items,
            valid_items: valid,
        })
    }

    /// Restores parameters, optimizer, counters and RNG from a checkpoint.
    /// The model, injection and provider sections must match.
    pub fn restore(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let cfg = &self.session.config;
        if ckpt.config.model != cfg.model || ckpt.config.injection != cfg.injection || ckpt.config.provider != cfg.provider {
            return config_err("checkpoint was trained with a different model, injection or provider");
        }
        self.session.store.load(&ckpt.params)?;
        for b in &ckpt.buffers {
            if b.name == BRIDGE_BUFFER {
                self.session.objective.set_bridge(b.to_tensor()?)?;
            }
        }
        self.adam.load_state(&self.session.store, &ckpt.optimizer)?;
        self.rng = ckpt.rng.restore()?;
        self.epoch = ckpt.epoch;
        self.step = ckpt.step;
        self.best_valid = ckpt.best_valid;
        Ok(())
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn session_mut(&mut self) -> &mut Session {
        &mut self.session
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn train_items(&self) -> &[NoisyCleanPair] {
        &self.train_items
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            config: self.session.config.clone(),
            params: self.session.store.snapshot()?,
            buffers: self.session.buffers()?,
            optimizer: self.adam.state(&self.session.store)?,
            epoch: self.epoch,
            step: self.step,
            best_valid: self.best_valid,
            rng: RngState::capture(&self.rng),
        })
    }

    fn out_dir(&self) -> &Path {
        &self.session.config.out_dir
    }

    fn append_log(&self, name: &str, value: &serde_json::Value) -> Result<()> {
        std::fs::create_dir_all(self.out_dir())?;
        let mut f = OpenOptions::new().create(true).append(true).open(self.out_dir().join(name))?;
        writeln!(f, "{value}")?;
        Ok(())
    }

    /// One optimizer step on an already augmented batch.
    pub fn train_step(&mut self, batch: &[NoisyCleanPair]) -> Result<LossBreakdown> {
        if batch.is_empty() {
            return arg_err("empty batch");
        }
        let x = stack(batch, true)?;
        let y = stack(batch, false)?;
        let out = self.session.loss(&x, &y)?;
        let total = out.total.to_scalar::<f64>()?;
        if !total.is_finite() {
            return Err(self.non_finite(batch, &out.breakdown));
        }
        let grads = out.total.backward()?;
        self.adam.step(&self.session.store, &grads)?;
        self.step += 1;
        self.append_log("losses.jsonl", &out.breakdown.log_record(self.step))?;
        Ok(out.breakdown)
    }

    fn non_finite(&self, batch: &[NoisyCleanPair], breakdown: &LossBreakdown) -> Error {
        let ids: Vec<String> = batch.iter().map(|p| p.id.clone()).collect();
        let path = self.out_dir().join(format!("nonfinite-step{}.json", self.step + 1));
        let snapshot = serde_json::json!({
            "step": self.step + 1,
            "epoch": self.epoch,
            "batch_ids": ids,
            "breakdown": {
                "l1": breakdown.l1_wave.to_string(),
                "sc": breakdown.sc.iter().map(f64::to_string).collect::<Vec<_>>(),
                "mag": breakdown.mag.iter().map(f64::to_string).collect::<Vec<_>>(),
                "phonetic": breakdown.phonetic.to_string(),
            },
        });
        if let Err(e) = std::fs::write(&path, snapshot.to_string()) {
            log::error!("could not write snapshot {}: {e}", path.display());
        }
        Error::NonFiniteLoss {
            step: self.step + 1,
            batch_ids: ids,
            snapshot: path.display().to_string(),
        }
    }

    /// Mean objective over whole validation utterances, one at a time,
    /// without augmentation or updates.
    pub fn validate(&self) -> Result<f64> {
        let mut sum = 0.0;
        for p in &self.valid_items {
            let items = std::slice::from_ref(p);
            sum += self.session.loss(&stack(items, true)?, &stack(items, false)?)?.breakdown.total;
        }
        Ok(sum / self.valid_items.len() as f64)
    }

    fn run_epoch(&mut self) -> Result<Vec<f64>> {
        let cfg = self.session.config.clone();
        let mut order: Vec<usize> = (0..self.train_items.len()).collect();
        order.shuffle(&mut self.rng);
        let mut losses = Vec::new();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<NoisyCleanPair> = chunk.iter().map(|&i| self.train_items[i].clone()).collect();
            let batch = augment_batch(&batch, &cfg.data.augment, &mut self.rng)?;
            losses.push(self.train_step(&batch)?.total);
        }
        Ok(losses)
    }

    /// Trains until `config.epochs` epochs are complete, writing
    /// `last.ckpt.json` every epoch and `best.ckpt.json` on improvement.
    pub fn run(&mut self) -> Result<TrainReport> {
        std::fs::create_dir_all(self.out_dir())?;
        let last = self.out_dir().join("last.ckpt.json");
        let best = self.out_dir().join("best.ckpt.json");
        let mut report = TrainReport {
            epochs: self.epoch,
            steps: self.step,
            step_losses: Vec::new(),
            valid_losses: Vec::new(),
            best_valid: self.best_valid,
            last_checkpoint: last.clone(),
            best_checkpoint: self.best_valid.map(|_| best.clone()),
            metrics_log: self.out_dir().join("metrics.jsonl"),
        };
        while self.epoch < self.session.config.epochs {
            let losses = self.run_epoch()?;
            let valid = self.validate()?;
            self.epoch += 1;
            let train_mean = losses.iter().sum::<f64>() / losses.len() as f64;
            info!("epoch {} train {train_mean:.6} valid {valid:.6}", self.epoch);
            self.append_log(
                "metrics.jsonl",
                &serde_json::json!({"epoch": self.epoch, "step": self.step, "train": train_mean, "valid": valid}),
            )?;
            report.step_losses.extend(losses);
            report.valid_losses.push(valid);
            let improved = self.best_valid.is_none_or(|b| valid < b);
            if improved {
                self.best_valid = Some(valid);
            }
            let ckpt = self.checkpoint()?;
            if improved {
                ckpt.save(&best)?;
                report.best_checkpoint = Some(best.clone());
            }
            ckpt.save(&last)?;
        }
        report.epochs = self.epoch;
        report.steps = self.step;
        report.best_valid = self.best_valid;
        Ok(report)
    }
}

pub fn train(cfg: &TrainConfig) -> Result<TrainReport> {
    Trainer::new(cfg)?.run()
}

/// Continues the run saved in `checkpoint` up to `cfg.epochs`.
pub fn resume(cfg: &TrainConfig, checkpoint: impl AsRef<Path>) -> Result<TrainReport> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let mut t = Trainer::new(cfg)?;
    t.restore(&ckpt)?;
    t.run()
}
