use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{mix_at_snr, NoisyCleanPair};
use crate::audio::wav::read_wav;
use crate::error::{arg_err, Error, Result};

/// Speakers held out for validation in Valentini-style corpora.
pub const VALIDATION_SPEAKERS: [&str; 2] = ["p286", "p287"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// One manifest line. Relative paths resolve against the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ManifestRecord {
    Paired {
        id: String,
        clean_path: PathBuf,
        noisy_path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        split: Option<Split>,
    },
    Mixed {
        id: String,
        clean_path: PathBuf,
        noise_path: PathBuf,
        snr_db: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        split: Option<Split>,
    },
}

impl ManifestRecord {
    pub fn id(&self) -> &str {
        match self {
            ManifestRecord::Paired { id, .. } | ManifestRecord::Mixed { id, .. } => id,
        }
    }

    pub fn clean_path(&self) -> &Path {
        match self {
            ManifestRecord::Paired { clean_path, .. } | ManifestRecord::Mixed { clean_path, .. } => clean_path,
        }
    }

    /// Declared split, else validation for the held-out speakers, else train.
    pub fn split(&self) -> Split {
        let declared = match self {
            ManifestRecord::Paired { split, .. } | ManifestRecord::Mixed { split, .. } => *split,
        };
        declared.unwrap_or_else(|| {
            let speaker = self.id().split(['_', '/', '-']).next().unwrap_or("");
            if VALIDATION_SPEAKERS.contains(&speaker) {
                Split::Valid
            } else {
                Split::Train
            }
        })
    }

    /// Reads (or mixes) the pair at `sample_rate`.
    pub fn load(&self, base: &Path, sample_rate: u32) -> Result<NoisyCleanPair> {
        let clean = read_wav(base.join(self.clean_path()), sample_rate)?;
        match self {
            ManifestRecord::Paired { id, noisy_path, .. } => {
                let noisy = read_wav(base.join(noisy_path), sample_rate)?;
                if noisy.len() != clean.len() {
                    return arg_err(format!(
                        "{id}: noisy has {} samples, clean has {}",
                        noisy.len(),
                        clean.len()
                    ));
                }
                NoisyCleanPair::new(id.clone(), noisy, clean)
            }
            ManifestRecord::Mixed {
                id, noise_path, snr_db, ..
            } => {
                let noise = read_wav(base.join(noise_path), sample_rate)?;
                mix_at_snr(id, &clean, &noise, *snr_db)
            }
        }
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path).map_err(|e| {
        Error::Config(format!("cannot open manifest {}: {e}", path.display()))
    })?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[ManifestRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Loads every record of the manifest, tagged with its split.
pub fn load_pairs(path: impl AsRef<Path>, sample_rate: u32) -> Result<Vec<(NoisyCleanPair, Split)>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    load_manifest(path)?
        .iter()
        .map(|r| Ok((r.load(base, sample_rate)?, r.split())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_both_layouts_and_splits() {
        let text = r#"{"id":"p286_001","clean_path":"c.wav","noisy_path":"n.wav"}
{"id":"p226_001","clean_path":"c.wav","noisy_path":"n.wav"}
{"id":"syn_3","clean_path":"c.wav","noise_path":"z.wav","snr_db":5.0,"split":"valid"}
"#;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        std::fs::write(&p, text).unwrap();
        let recs = load_manifest(&p).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].split(), Split::Valid);
        assert_eq!(recs[1].split(), Split::Train);
        assert!(matches!(recs[2], ManifestRecord::Mixed { .. }));
        assert_eq!(recs[2].split(), Split::Valid);
        let out = dir.path().join("o.jsonl");
        write_manifest(&out, &recs).unwrap();
        assert_eq!(load_manifest(&out).unwrap(), recs);
    }

    #[test]
    fn bad_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        std::fs::write(&p, "{\"id\": 1}\n").unwrap();
        assert!(load_manifest(&p).unwrap_err().to_string().contains(":1:"));
    }
}
