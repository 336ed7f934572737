use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use phase_forge::augment::{generate_dataset, SynthConfig};
use phase_forge::eval::{
    self, AdapterRegistry, EvalOptions, LayerAnalysisConfig, MetricName, ResultsDb,
};
use phase_forge::trainer::{self, Checkpoint, Session, TrainConfig, ENV_PREFIX};
use phase_forge::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "phase-forge", version, about = "Phonetic-aware speech enhancement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML (or .json) file for this subcommand.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed. Inference commands are deterministic
    /// and ignore it.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train an enhancer. Settings may also come from PHASE_FORGE_* variables.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Enhance every WAV in a directory.
    Enhance {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Score a checkpoint on a manifest, or estimate files against references.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, requires = "manifest")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, requires = "estimate_dir", conflicts_with = "checkpoint")]
        reference_dir: Option<PathBuf>,
        #[arg(long, requires = "reference_dir")]
        estimate_dir: Option<PathBuf>,
        /// Comma-separated metric names, e.g. SI-SNR,LSD,PESQ.
        #[arg(long, value_delimiter = ',')]
        metrics: Vec<String>,
        /// Adapter registry file for external metrics.
        #[arg(long)]
        adapters: Option<PathBuf>,
        /// Append a run record for the checkpoint to this results database.
        #[arg(long)]
        results_db: Option<PathBuf>,
        #[arg(long, default_value_t = 16_000)]
        sample_rate: u32,
    },
    /// Train and score one model per provider-layer selection.
    LayerAnalysis {
        #[command(flatten)]
        common: Common,
    },
    /// Write a small synthetic noisy/clean corpus and its manifest.
    SynthData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        utterances: Option<usize>,
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Render the comparison tables and layer-weight chart.
    Report {
        #[command(flatten)]
        common: Common,
        /// Results database (JSON lines).
        #[arg(long)]
        results: Option<PathBuf>,
    },
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        Ok(serde_json::from_str(&text)?)
    } else {
        Ok(toml::from_str(&text)?)
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnhanceFile {
    checkpoint: Option<PathBuf>,
    input: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportFile {
    results: Option<PathBuf>,
}

fn required<T>(v: Option<T>, what: &str) -> Result<T> {
    v.ok_or_else(|| Error::Argument(format!("{what} is required")))
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, resume } => {
            let mut cfg = TrainConfig::load(common.config.as_deref())?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            if let Some(o) = common.out {
                cfg.out_dir = o;
            }
            let report = match resume {
                Some(ckpt) => trainer::resume(&cfg, ckpt)?,
                None => trainer::train(&cfg)?,
            };
            print_json(&report)
        }
        Command::Enhance { common, checkpoint, input } => {
            let file: EnhanceFile = read_config(common.config.as_deref())?;
            let checkpoint = required(checkpoint.or(file.checkpoint), "--checkpoint")?;
            let input = required(input.or(file.input), "--input")?;
            let out = common.out.unwrap_or_else(|| PathBuf::from("enhanced"));
            let report = eval::enhance(&checkpoint, &input, &out)?;
            info!("wrote {} files to {}", report.written.len(), out.display());
            for (p, e) in &report.failed {
                warn!("failed {}: {e}", p.display());
            }
            print_json(&report)
        }
        Command::Evaluate {
            common,
            checkpoint,
            manifest,
            reference_dir,
            estimate_dir,
            metrics,
            adapters,
            results_db,
            sample_rate,
        } => {
            let mut opts: EvalOptions = read_config(common.config.as_deref())?;
            if !metrics.is_empty() {
                opts.metrics = metrics.iter().map(|m| m.parse::<MetricName>()).collect::<Result<_>>()?;
            }
            if let Some(a) = adapters {
                let extra = AdapterRegistry::load(a)?;
                opts.adapters.adapters.extend(extra.adapters);
            }
            let out = common.out.unwrap_or_else(|| PathBuf::from("eval"));
            let summary = match (checkpoint, manifest, reference_dir, estimate_dir) {
                (Some(ckpt), Some(manifest), None, None) => {
                    let session = Session::from_checkpoint(&Checkpoint::load(&ckpt)?)?;
                    let summary = eval::evaluate_session(&session, &manifest, &opts, Some(&out.join("enhanced")))?;
                    if let Some(db) = results_db {
                        ResultsDb::append(db, &eval::run_record(&session, &ckpt, &summary)?)?;
                    }
                    summary
                }
                (None, None, Some(r), Some(e)) => {
                    if results_db.is_some() {
                        warn!("--results-db only applies to checkpoint evaluation");
                    }
                    eval::evaluate_dirs(&r, &e, sample_rate, &opts)?
                }
                _ => {
                    return Err(Error::Argument(
                        "give either --checkpoint with --manifest, or --reference-dir with --estimate-dir".into(),
                    ))
                }
            };
            summary.write(&out)?;
            print_json(&summary.means)
        }
        Command::LayerAnalysis { common } => {
            let mut cfg: LayerAnalysisConfig = read_config(common.config.as_deref())?;
            cfg.train = cfg.train.with_overrides(std::env::vars())?;
            if let Some(s) = common.seed {
                cfg.train.seed = s;
            }
            let out = common.out.unwrap_or_else(|| PathBuf::from("layer-analysis"));
            let report = eval::layer_analysis(&cfg, &out)?;
            print!("{}", report.table.to_markdown());
            if let Some(w) = &report.learned_weights {
                let total: f64 = w.iter().map(|l| l.weight).sum();
                println!("learned weight total: {total}");
            }
            Ok(())
        }
        Command::SynthData { common, utterances, duration } => {
            let mut cfg: SynthConfig = read_config(common.config.as_deref())?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            if let Some(n) = utterances {
                cfg.num_utterances = n;
            }
            if let Some(d) = duration {
                cfg.duration_s = d;
            }
            let out = common.out.unwrap_or_else(|| PathBuf::from("data/synth"));
            let records = generate_dataset(&cfg, &out)?;
            println!("{}", out.join("manifest.jsonl").display());
            info!("{} utterances", records.len());
            Ok(())
        }
        Command::Report { common, results } => {
            let file: ReportFile = read_config(common.config.as_deref())?;
            let results = required(results.or(file.results), "--results")?;
            let out = common.out.unwrap_or_else(|| PathBuf::from("report"));
            let db = ResultsDb::load(&results)?;
            let files = eval::write_report(&db, &out)?;
            for f in &files.files {
                println!("{}", f.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Config(_)) {
                eprintln!("(configuration can also be set through {ENV_PREFIX}* environment variables)");
            }
            ExitCode::FAILURE
        }
    }
}
