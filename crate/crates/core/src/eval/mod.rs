//! Inference, objective evaluation and report generation.

mod external;
mod metrics;
mod report;

pub use external::{AdapterRegistry, ExternalAdapter};
pub use metrics::{
    log_spectral_distance, native_metric, si_snr, MetricName, MetricRecord, LSD_HOP, LSD_NFFT, LSD_POWER_EPS,
    SI_SNR_CAP_DB,
};
pub use report::{
    config_label, improvement_table, layer_table, runs_csv, setting_label, setting_table, write_report, ReportFiles,
    ResultsDb, ResultsTable, RunRecord, TableRow, BASELINE_ROW, MISSING,
};

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::wav::{read_wav, write_wav, WavFormat};
use crate::audio::Waveform;
use crate::augment::{load_manifest, Split};
use crate::error::{arg_err, Error, Result};
use crate::objectives::Setting;
use crate::phonetic::{report_layer_weights, LayerMode, LayerWeight};
use crate::trainer::{file_hash, Checkpoint, Session, TrainConfig, Trainer};

/// Sorted `*.wav` files directly inside `dir`.
pub fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::Argument(format!("{}: {e}", dir.display())))? {
        let p = entry?.path();
        if p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnhanceReport {
    pub written: Vec<PathBuf>,
    /// Inputs that could not be processed, with the reason.
    pub failed: Vec<(PathBuf, String)>,
}

/// Enhances every WAV in `in_dir` into `out_dir` under the same file name,
/// as 32-bit float at the pipeline rate. Unreadable files are reported and
/// skipped.
pub fn enhance(checkpoint: impl AsRef<Path>, in_dir: impl AsRef<Path>, out_dir: impl AsRef<Path>) -> Result<EnhanceReport> {
    let session = Session::from_checkpoint(&Checkpoint::load(checkpoint)?)?;
    enhance_dir(&session, in_dir.as_ref(), out_dir.as_ref())
}

pub fn enhance_dir(session: &Session, in_dir: &Path, out_dir: &Path) -> Result<EnhanceReport> {
    let files = wav_files(in_dir)?;
    std::fs::create_dir_all(out_dir)?;
    let rate = session.config.data.sample_rate;
    let results: Vec<(PathBuf, Result<PathBuf>)> = files
        .par_iter()
        .map(|input| {
            let run = || -> Result<PathBuf> {
                let noisy = read_wav(input, rate)?;
                let out = session.enhance(&noisy)?;
                let dest = out_dir.join(input.file_name().expect("listed files have names"));
                write_wav(&dest, &out, WavFormat::Float32)?;
                Ok(dest)
            };
            (input.clone(), run())
        })
        .collect();
    let mut report = EnhanceReport::default();
    for (input, r) in results {
        match r {
            Ok(dest) => report.written.push(dest),
            // A provider failure affects every file, so it is not per-file.
            Err(e @ Error::Provider { .. }) => return Err(e),
            Err(e) => {
                warn!("{}: {e}", input.display());
                report.failed.push((input, e.to_string()));
            }
        }
    }
    Ok(report)
}

/// Which metrics to compute and how to reach the external ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalOptions {
    #[serde(default = "default_metrics")]
    pub metrics: Vec<MetricName>,
    #[serde(default)]
    pub adapters: AdapterRegistry,
    /// Manifest split to evaluate; all records when unset.
    #[serde(default)]
    pub split: Option<Split>,
}

fn default_metrics() -> Vec<MetricName> {
    MetricName::ALL.iter().copied().filter(|m| *m != MetricName::Stoi).collect()
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            metrics: default_metrics(),
            adapters: AdapterRegistry::default(),
            split: None,
        }
    }
}

impl EvalOptions {
    pub fn native_only() -> Self {
        Self {
            metrics: MetricName::NATIVE.to_vec(),
            ..Self::default()
        }
    }

    /// Requested metrics that can actually be computed; unregistered
    /// external ones are dropped with a warning.
    fn runnable(&self) -> (Vec<MetricName>, Vec<MetricName>) {
        let mut run = Vec::new();
        let mut skipped = Vec::new();
        for &m in &self.metrics {
            if run.contains(&m) || skipped.contains(&m) {
                continue;
            }
            if m.is_native() || self.adapters.get(m).is_some() {
                run.push(m);
            } else {
                warn!("no adapter registered for {m}; skipping it");
                skipped.push(m);
            }
        }
        (run, skipped)
    }
}

/// One reference/estimate pair. Paths are only needed by external metrics.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub id: String,
    pub reference: Waveform,
    pub estimate: Waveform,
    pub reference_path: Option<PathBuf>,
    pub estimate_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    /// Sorted by utterance id, then metric.
    pub records: Vec<MetricRecord>,
    pub means: BTreeMap<MetricName, f64>,
    pub utterances: usize,
    pub skipped: Vec<MetricName>,
}

impl EvalSummary {
    pub fn records_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Internal(e.to_string());
        w.write_record(["utterance_id", "metric", "value", "in_range"]).map_err(err)?;
        for r in &self.records {
            w.write_record([r.utterance_id.clone(), r.metric.to_string(), r.value.to_string(), r.in_range.to_string()])
                .map_err(err)?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Internal(e.to_string()))?)
            .map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn write(&self, out_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(out_dir)?;
        std::fs::write(out_dir.join("records.csv"), self.records_csv()?)?;
        std::fs::write(out_dir.join("summary.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Computes the requested metrics for every item in parallel. Records are
/// merged in utterance-id order and means are summed in that order, so the
/// summary does not depend on the input order.
pub fn evaluate_items(items: &[EvalItem], opts: &EvalOptions) -> Result<EvalSummary> {
    let ids: BTreeSet<&str> = items.iter().map(|i| i.id.as_str()).collect();
    if ids.len() != items.len() {
        return arg_err("duplicate utterance ids");
    }
    let (metrics, skipped) = opts.runnable();
    let per_item: Vec<Vec<MetricRecord>> = items
        .par_iter()
        .map(|item| {
            let mut recs = Vec::new();
            for &m in &metrics {
                let value = if m.is_native() {
                    native_metric(m, &item.reference, &item.estimate)
                } else {
                    let adapter = opts.adapters.get(m).expect("runnable metrics have adapters");
                    match (&item.reference_path, &item.estimate_path) {
                        (Some(r), Some(e)) => adapter.run(r, e),
                        _ => arg_err(format!("{m} needs files on disk for {}", item.id)),
                    }
                };
                let value = value.map_err(|e| Error::Argument(format!("{} {m}: {e}", item.id)))?;
                recs.push(MetricRecord::new(&item.id, m, value));
            }
            Ok(recs)
        })
        .collect::<Result<_>>()?;
    let mut records: Vec<MetricRecord> = per_item.into_iter().flatten().collect();
    records.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id).then(a.metric.cmp(&b.metric)));
    for r in records.iter().filter(|r| !r.in_range) {
        warn!("{} {} = {} is outside its documented range", r.utterance_id, r.metric, r.value);
    }
    let mut sums: BTreeMap<MetricName, (f64, usize)> = BTreeMap::new();
    for r in &records {
        let e = sums.entry(r.metric).or_default();
        e.0 += r.value;
        e.1 += 1;
    }
    Ok(EvalSummary {
        means: sums.into_iter().map(|(m, (s, n))| (m, s / n as f64)).collect(),
        records,
        utterances: items.len(),
        skipped,
    })
}

/// Scores each WAV in `estimate_dir` against the same-named file in
/// `reference_dir`.
pub fn evaluate_dirs(reference_dir: &Path, estimate_dir: &Path, sample_rate: u32, opts: &EvalOptions) -> Result<EvalSummary> {
    let mut items = Vec::new();
    for est in wav_files(estimate_dir)? {
        let name = est.file_name().expect("listed files have names");
        let reference = reference_dir.join(name);
        if !reference.is_file() {
            return arg_err(format!("missing reference {}", reference.display()));
        }
        items.push(EvalItem {
            id: est.file_stem().unwrap_or(name).to_string_lossy().into_owned(),
            reference: read_wav(&reference, sample_rate)?,
            estimate: read_wav(&est, sample_rate)?,
            reference_path: Some(reference),
            estimate_path: Some(est),
        });
    }
    evaluate_items(&items, opts)
}

/// Enhances the noisy side of every manifest record with `session` and
/// scores it against the clean reference. Enhanced audio goes to
/// `estimate_dir` when given, which external metrics require.
pub fn evaluate_session(
    session: &Session,
    manifest: &Path,
    opts: &EvalOptions,
    estimate_dir: Option<&Path>,
) -> Result<EvalSummary> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let rate = session.config.data.sample_rate;
    let records: Vec<_> = load_manifest(manifest)?
        .into_iter()
        .filter(|r| opts.split.is_none_or(|s| r.split() == s))
        .collect();
    if records.is_empty() {
        return arg_err(format!("{} has no records to evaluate", manifest.display()));
    }
    for r in &records {
        let p = base.join(r.clean_path());
        if !p.is_file() {
            return arg_err(format!("{}: missing reference {}", r.id(), p.display()));
        }
    }
    if let Some(d) = estimate_dir {
        std::fs::create_dir_all(d)?;
    }
    let items: Vec<EvalItem> = records
        .par_iter()
        .map(|r| {
            let pair = r.load(base, rate)?;
            let estimate = session.enhance(&pair.noisy)?;
            let estimate_path = match estimate_dir {
                Some(d) => {
                    let p = d.join(format!("{}.wav", r.id().replace(['/', '\\'], "_")));
                    write_wav(&p, &estimate, WavFormat::Float32)?;
                    Some(p)
                }
                None => None,
            };
            Ok(EvalItem {
                id: r.id().to_string(),
                reference: pair.clean,
                estimate,
                reference_path: Some(base.join(r.clean_path())),
                estimate_path,
            })
        })
        .collect::<Result<_>>()?;
    evaluate_items(&items, opts)
}

pub fn evaluate(
    checkpoint: impl AsRef<Path>,
    manifest: impl AsRef<Path>,
    opts: &EvalOptions,
    estimate_dir: Option<&Path>,
) -> Result<EvalSummary> {
    let session = Session::from_checkpoint(&Checkpoint::load(checkpoint)?)?;
    evaluate_session(&session, manifest.as_ref(), opts, estimate_dir)
}

/// Labels a run the way the report tables expect.
pub fn run_record(session: &Session, checkpoint: &Path, summary: &EvalSummary) -> Result<RunRecord> {
    let cfg = &session.config;
    let setting = cfg.injection.setting;
    let (phonetic_model, layer_weights) = match (session.objective.provider(), session.objective.selection()) {
        (Some(p), Some(sel)) => {
            let tag = match sel.mode() {
                LayerMode::Fixed { layer } => format!("L{layer}"),
                LayerMode::Mean => "Avg".to_string(),
                LayerMode::Learned => "LrnW".to_string(),
            };
            let weights = match sel.mode() {
                LayerMode::Learned => Some(sel.weights()?),
                _ => None,
            };
            (format!("{}-{tag}", p.name()), weights)
        }
        _ => ("-".to_string(), None),
    };
    Ok(RunRecord {
        config: config_label(&cfg.model),
        setting: setting_label(setting).to_string(),
        phonetic_model,
        causal: cfg.model.causal,
        layer: None,
        metrics: summary.means.clone(),
        seed: cfg.seed,
        checkpoint: checkpoint.to_path_buf(),
        checkpoint_hash: file_hash(checkpoint)?,
        layer_weights,
    })
}

/// The layer-selection sweep: one training run per selection plus an
/// optional unconditioned baseline, each evaluated on the held-out split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerAnalysisConfig {
    /// Shared training recipe. Its injection setting and selection are
    /// replaced per run.
    #[serde(default)]
    pub train: TrainConfig,
    /// Injection used for every selection.
    #[serde(default = "default_sweep_setting")]
    pub setting: Setting,
    /// Defaults to every fixed layer, then mean, then learned.
    #[serde(default)]
    pub selections: Option<Vec<LayerMode>>,
    #[serde(default = "default_true")]
    pub baseline: bool,
    #[serde(default)]
    pub eval: EvalOptions,
}

fn default_true() -> bool {
    true
}

fn default_sweep_setting() -> Setting {
    Setting::Conditioning
}

impl Default for LayerAnalysisConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            setting: default_sweep_setting(),
            selections: None,
            baseline: true,
            eval: EvalOptions::default(),
        }
    }
}

impl LayerAnalysisConfig {
    pub fn selections(&self, num_layers: usize) -> Vec<LayerMode> {
        self.selections.clone().unwrap_or_else(|| {
            (0..num_layers)
                .map(|layer| LayerMode::Fixed { layer })
                .chain([LayerMode::Mean, LayerMode::Learned])
                .collect()
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerAnalysisReport {
    pub db: ResultsDb,
    pub table: ResultsTable,
    pub learned_weights: Option<Vec<LayerWeight>>,
    pub files: ReportFiles,
}

/// Runs the sweep under `out`: `runs/<label>/` per training run, then
/// `results.jsonl` and the report files.
pub fn layer_analysis(cfg: &LayerAnalysisConfig, out: &Path) -> Result<LayerAnalysisReport> {
    let manifest = cfg
        .train
        .data
        .manifest
        .clone()
        .ok_or_else(|| Error::Config("train.data.manifest is not set".into()))?;
    if !cfg.setting.uses_provider() {
        return Err(Error::Config("layer analysis needs a setting that uses the provider".into()));
    }
    let provider = cfg.train.provider.build()?;
    let num_layers = provider.num_layers();
    let mut plan: Vec<(String, TrainConfig)> = Vec::new();
    if cfg.baseline {
        let mut t = cfg.train.clone();
        t.injection.setting = Setting::Base;
        plan.push((BASELINE_ROW.to_string(), t));
    }
    for mode in cfg.selections(num_layers) {
        let mut t = cfg.train.clone();
        t.injection.setting = cfg.setting;
        t.injection.selection = mode;
        plan.push((mode.label(num_layers), t));
    }
    let mut eval_opts = cfg.eval.clone();
    if eval_opts.split.is_none() {
        let has_valid = load_manifest(&manifest)?.iter().any(|r| r.split() != Split::Train);
        eval_opts.split = Some(if has_valid { Split::Valid } else { Split::Train });
    }
    let mut db = ResultsDb::default();
    let mut learned_weights = None;
    for (label, mut t) in plan {
        let run_dir = out.join("runs").join(slug(&label));
        t.out_dir = run_dir.clone();
        t.validate()?;
        info!("layer analysis: training `{label}`");
        let mut trainer = Trainer::new(&t)?;
        let report = trainer.run()?;
        let ckpt_path = report.best_checkpoint.unwrap_or(report.last_checkpoint);
        let session = Session::from_checkpoint(&Checkpoint::load(&ckpt_path)?)?;
        let summary = evaluate_session(&session, &manifest, &eval_opts, Some(&run_dir.join("enhanced")))?;
        summary.write(&run_dir)?;
        if let Some(sel) = session.objective.selection().filter(|s| s.mode() == LayerMode::Learned) {
            learned_weights = Some(report_layer_weights(sel)?);
        }
        let mut record = run_record(&session, &ckpt_path, &summary)?;
        record.layer = Some(label);
        db.runs.push(record);
    }
    std::fs::create_dir_all(out)?;
    db.save(out.join("results.jsonl"))?;
    let files = write_report(&db, out)?;
    Ok(LayerAnalysisReport {
        table: layer_table(&db)?,
        db,
        learned_weights,
        files,
    })
}

fn slug(label: &str) -> String {
    let s: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect();
    let s = s.trim_matches('-').to_string();
    if s.chars().all(|c| c.is_ascii_digit()) {
        format!("layer-{s}")
    } else {
        s
    }
}
