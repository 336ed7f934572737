//! Result records and the two report tables (setting comparison and layer
//! selection), rendered as CSV and Markdown.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::MetricName;
use crate::error::{arg_err, Error, Result};
use crate::model::DemucsConfig;
use crate::phonetic::{layer_weights_csv, layer_weights_svg, LayerWeight};

pub const BASELINE_ROW: &str = "Baseline";
/// Rendered for cells without a value.
pub const MISSING: &str = "-";

/// One evaluated run, traceable to its checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Model geometry label such as `H=48,U=4,S=4`.
    pub config: String,
    /// `Base`, `Reg`, `Sup` or `Cond`.
    pub setting: String,
    /// Provider label, `-` for the baseline.
    pub phonetic_model: String,
    pub causal: bool,
    /// Row label in the layer-selection table; `None` keeps the run out of it.
    #[serde(default)]
    pub layer: Option<String>,
    pub metrics: BTreeMap<MetricName, f64>,
    pub seed: u64,
    pub checkpoint: PathBuf,
    pub checkpoint_hash: String,
    #[serde(default)]
    pub layer_weights: Option<Vec<f64>>,
}

pub fn config_label(cfg: &DemucsConfig) -> String {
    format!("H={},U={},S={}", cfg.hidden, cfg.upscale, cfg.stride)
}

/// Short setting names used in the tables.
pub fn setting_label(setting: crate::objectives::Setting) -> &'static str {
    use crate::objectives::Setting::*;
    match setting {
        Base => "Base",
        Regularization => "Reg",
        Supervision => "Sup",
        Conditioning => "Cond",
    }
}

/// Append-only JSON-lines store of run records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultsDb {
    pub runs: Vec<RunRecord>,
}

impl ResultsDb {
    /// A missing file is an empty database.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Ok(Self::default());
        }
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut runs = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            runs.push(
                serde_json::from_str(&line)
                    .map_err(|e| Error::Argument(format!("{}:{}: {e}", path.display(), i + 1)))?,
            );
        }
        Ok(Self { runs })
    }

    pub fn append(path: impl AsRef<Path>, run: &RunRecord) -> Result<()> {
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        writeln!(f, "{}", serde_json::to_string(run)?)?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = String::new();
        for r in &self.runs {
            text.push_str(&serde_json::to_string(r)?);
            text.push('\n');
        }
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Metrics shown as columns: the perceptual five, then any other metric
    /// present in `runs`.
    fn columns<'a>(runs: impl Iterator<Item = &'a RunRecord> + Clone) -> Vec<MetricName> {
        let mut cols = MetricName::PERCEPTUAL.to_vec();
        for m in MetricName::ALL {
            if !cols.contains(&m) && runs.clone().any(|r| r.metrics.contains_key(&m)) {
                cols.push(m);
            }
        }
        cols
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub keys: Vec<String>,
    pub values: Vec<Option<f64>>,
}

/// Keyed rows of metric cells. Values are stored at the two-decimal
/// precision they are rendered with, so rendering then parsing is lossless.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultsTable {
    pub key_headers: Vec<String>,
    pub value_headers: Vec<String>,
    pub rows: Vec<TableRow>,
}

fn quantize(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

impl ResultsTable {
    pub fn new(key_headers: Vec<String>, value_headers: Vec<String>) -> Self {
        Self {
            key_headers,
            value_headers,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, keys: Vec<String>, values: Vec<Option<f64>>) -> Result<()> {
        if keys.len() != self.key_headers.len() || values.len() != self.value_headers.len() {
            return arg_err(format!(
                "row has {}+{} cells, table has {}+{} columns",
                keys.len(),
                values.len(),
                self.key_headers.len(),
                self.value_headers.len()
            ));
        }
        self.rows.push(TableRow {
            keys,
            values: values.into_iter().map(|v| v.map(quantize)).collect(),
        });
        Ok(())
    }

    pub fn headers(&self) -> Vec<String> {
        self.key_headers.iter().chain(&self.value_headers).cloned().collect()
    }

    pub fn cell(v: Option<f64>) -> String {
        match v {
            Some(v) => format!("{v:.2}"),
            None => MISSING.to_string(),
        }
    }

    fn string_rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| r.keys.iter().cloned().chain(r.values.iter().map(|&v| Self::cell(v))).collect())
            .collect()
    }

    pub fn find(&self, keys: &[&str]) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.keys.iter().map(String::as_str).eq(keys.iter().copied()))
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.headers()).map_err(csv_err)?;
        for row in self.string_rows() {
            w.write_record(row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))
    }

    /// Parses CSV written by [`ResultsTable::to_csv`]; the first
    /// `key_columns` columns are row keys.
    pub fn from_csv(text: &str, key_columns: usize) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let headers: Vec<String> = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
        if headers.len() < key_columns {
            return arg_err("fewer columns than key columns");
        }
        let mut table = Self::new(headers[..key_columns].to_vec(), headers[key_columns..].to_vec());
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            let keys = rec.iter().take(key_columns).map(String::from).collect();
            let values = rec
                .iter()
                .skip(key_columns)
                .map(|c| match c {
                    MISSING => Ok(None),
                    c => c
                        .parse::<f64>()
                        .map(Some)
                        .map_err(|_| Error::Argument(format!("bad cell `{c}`"))),
                })
                .collect::<Result<_>>()?;
            table.push(keys, values)?;
        }
        Ok(table)
    }

    pub fn to_markdown(&self) -> String {
        let headers = self.headers();
        let rows = self.string_rows();
        let widths: Vec<usize> = (0..headers.len())
            .map(|c| rows.iter().map(|r| r[c].len()).chain([headers[c].len(), 3]).max().unwrap_or(3))
            .collect();
        let line = |cells: &[String]| {
            let mut s = String::from("|");
            for (c, w) in cells.iter().zip(&widths) {
                let _ = write!(s, " {c:<w$} |");
            }
            s.push('\n');
            s
        };
        let mut out = line(&headers);
        out.push('|');
        for (i, w) in widths.iter().enumerate() {
            let dashes = "-".repeat(*w);
            if i < self.key_headers.len() {
                let _ = write!(out, " {dashes} |");
            } else {
                let _ = write!(out, " {}: |", &dashes[1..]);
            }
        }
        out.push('\n');
        for r in &rows {
            out.push_str(&line(r));
        }
        out
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Argument(format!("csv: {e}"))
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Groups rows by key in order of first appearance, averaging repeated runs
/// (for example several seeds) per metric.
fn grouped<'a, K: PartialEq + Clone>(runs: impl Iterator<Item = (K, &'a RunRecord)>) -> Vec<(K, Vec<&'a RunRecord>)> {
    let mut groups: Vec<(K, Vec<&RunRecord>)> = Vec::new();
    for (k, r) in runs {
        match groups.iter_mut().find(|(g, _)| *g == k) {
            Some((_, v)) => v.push(r),
            None => groups.push((k, vec![r])),
        }
    }
    groups
}

fn metric_mean(runs: &[&RunRecord], m: MetricName) -> Option<f64> {
    mean(&runs.iter().filter_map(|r| r.metrics.get(&m).copied()).collect::<Vec<_>>())
}

/// Setting comparison: one row per (config, setting, phonetic model), with
/// causal then non-causal metric groups. Rows are grouped by config in order
/// of first appearance.
pub fn setting_table(db: &ResultsDb) -> Result<ResultsTable> {
    let cols = ResultsDb::columns(db.runs.iter());
    let mut value_headers = Vec::new();
    for group in ["Causal", "Non-causal"] {
        for m in &cols {
            value_headers.push(format!("{group} {m}"));
        }
    }
    let mut table = ResultsTable::new(
        vec!["Config".into(), "Setting".into(), "Phonetic Model".into()],
        value_headers,
    );
    let mut configs: Vec<&str> = Vec::new();
    for r in &db.runs {
        if !configs.contains(&r.config.as_str()) {
            configs.push(&r.config);
        }
    }
    for config in configs {
        let runs = db
            .runs
            .iter()
            .filter(|r| r.config == config)
            .map(|r| ((r.setting.clone(), r.phonetic_model.clone()), r));
        for ((setting, phonetic), members) in grouped(runs) {
            let mut values = Vec::new();
            for causal in [true, false] {
                let side: Vec<&RunRecord> = members.iter().copied().filter(|r| r.causal == causal).collect();
                values.extend(cols.iter().map(|&m| metric_mean(&side, m)));
            }
            table.push(vec![config.to_string(), setting, phonetic], values)?;
        }
    }
    Ok(table)
}

fn layer_order(label: &str) -> (u8, usize) {
    if label == BASELINE_ROW {
        (0, 0)
    } else if let Ok(n) = label.parse::<usize>() {
        (1, n)
    } else if label.starts_with("Avg") {
        (2, 0)
    } else if label.starts_with("Lrn") {
        (3, 0)
    } else {
        (4, 0)
    }
}

/// Layer-selection comparison: Baseline, each fixed layer, mean, learned.
pub fn layer_table(db: &ResultsDb) -> Result<ResultsTable> {
    let runs: Vec<&RunRecord> = db.runs.iter().filter(|r| r.layer.is_some()).collect();
    let cols = ResultsDb::columns(runs.iter().copied());
    let mut table = ResultsTable::new(vec!["Layer #".into()], cols.iter().map(|m| m.to_string()).collect());
    let mut groups = grouped(runs.iter().map(|r| (r.layer.clone().unwrap_or_default(), *r)));
    groups.sort_by_key(|(label, _)| layer_order(label));
    for (label, members) in groups {
        table.push(vec![label], cols.iter().map(|&m| metric_mean(&members, m)).collect())?;
    }
    Ok(table)
}

/// Signed relative change in percent of each run against the `Base` run
/// with the same config and causality. How these are aggregated into a
/// single headline figure is left to the reader.
pub fn improvement_table(db: &ResultsDb) -> Result<ResultsTable> {
    let cols = ResultsDb::columns(db.runs.iter());
    let mut table = ResultsTable::new(
        vec!["Config".into(), "Setting".into(), "Phonetic Model".into(), "Causality".into()],
        cols.iter().map(|m| format!("{m} %")).collect(),
    );
    let keyed = db.runs.iter().filter(|r| r.layer.is_none()).map(|r| {
        (
            (r.config.clone(), r.setting.clone(), r.phonetic_model.clone(), r.causal),
            r,
        )
    });
    let groups = grouped(keyed);
    for ((config, setting, phonetic, causal), members) in &groups {
        if setting == "Base" {
            continue;
        }
        let Some((_, base)) = groups
            .iter()
            .find(|((c, s, _, k), _)| c == config && s == "Base" && k == causal)
        else {
            continue;
        };
        let values = cols
            .iter()
            .map(|&m| match (metric_mean(members, m), metric_mean(base, m)) {
                (Some(v), Some(b)) if b != 0.0 => Some(100.0 * (v - b) / b.abs()),
                _ => None,
            })
            .collect();
        let causality = if *causal { "causal" } else { "non-causal" };
        table.push(
            vec![config.clone(), setting.clone(), phonetic.clone(), causality.into()],
            values,
        )?;
    }
    Ok(table)
}

/// Seed and checkpoint hash behind every row, for traceability.
pub fn runs_csv(db: &ResultsDb) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["Config", "Setting", "Phonetic Model", "Causal", "Layer", "Seed", "Checkpoint", "Hash"])
        .map_err(csv_err)?;
    for r in &db.runs {
        w.write_record([
            r.config.clone(),
            r.setting.clone(),
            r.phonetic_model.clone(),
            r.causal.to_string(),
            r.layer.clone().unwrap_or_else(|| MISSING.into()),
            r.seed.to_string(),
            r.checkpoint.display().to_string(),
            r.checkpoint_hash.clone(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))
}

/// Files written by [`write_report`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportFiles {
    pub files: Vec<PathBuf>,
}

/// Writes both tables (CSV and Markdown), the relative improvements, the
/// run list and, when a learned selection is present, the layer-weight CSV
/// and chart.
pub fn write_report(db: &ResultsDb, out: impl AsRef<Path>) -> Result<ReportFiles> {
    let out = out.as_ref();
    std::fs::create_dir_all(out)?;
    let mut files = ReportFiles::default();
    let mut put = |name: &str, text: String| -> Result<()> {
        let p = out.join(name);
        std::fs::write(&p, text)?;
        files.files.push(p);
        Ok(())
    };
    let settings = setting_table(db)?;
    put("table1.csv", settings.to_csv()?)?;
    put("table1.md", settings.to_markdown())?;
    let layers = layer_table(db)?;
    put("table2.csv", layers.to_csv()?)?;
    put("table2.md", layers.to_markdown())?;
    put("improvements.csv", improvement_table(db)?.to_csv()?)?;
    put("runs.csv", runs_csv(db)?)?;
    if let Some(r) = db.runs.iter().rev().find(|r| r.layer_weights.is_some()) {
        let weights: Vec<LayerWeight> = r
            .layer_weights
            .iter()
            .flatten()
            .enumerate()
            .map(|(layer, &weight)| LayerWeight { layer, weight })
            .collect();
        put("layer_weights.csv", layer_weights_csv(&weights))?;
        let title = format!("Learned layer weights ({})", r.phonetic_model);
        put("layer_weights.svg", layer_weights_svg(&weights, &title))?;
    }
    Ok(files)
}
