use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;

pub const MANIFEST_FILE: &str = "manifest.json";
/// Wall-clock timings live beside the manifest so the manifest itself stays
/// reproducible.
pub const TIMINGS_FILE: &str = "timings.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Ingest,
    Pretrain,
    Collect,
    Sft,
    Rl,
    Generate,
    Evaluate,
}

impl Phase {
    pub const ALL: [Phase; 7] = [
        Phase::Ingest,
        Phase::Pretrain,
        Phase::Collect,
        Phase::Sft,
        Phase::Rl,
        Phase::Generate,
        Phase::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Ingest => "ingest",
            Phase::Pretrain => "pretrain",
            Phase::Collect => "collect",
            Phase::Sft => "sft",
            Phase::Rl => "rl",
            Phase::Generate => "generate",
            Phase::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// A file written by a phase, relative to the output directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseRecord {
    /// Hash of the configuration the phase depends on, upstream included.
    pub key: String,
    pub seed: u64,
    pub artifacts: Vec<Artifact>,
}

impl PhaseRecord {
    pub fn artifact(&self, suffix: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.path.ends_with(suffix))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub code_version: String,
    /// Hash of the full configuration of the latest phase run.
    pub config_hash: String,
    pub seed: u64,
    /// Keyed by phase name, with the report label for generate and
    /// evaluate (`generate:rl_ours`).
    pub phases: BTreeMap<String, PhaseRecord>,
}

impl RunManifest {
    pub fn new(config_hash: String, seed: u64) -> Self {
        RunManifest {
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash,
            seed,
            phases: BTreeMap::new(),
        }
    }

    /// Reads `dir/manifest.json`, or `None` when absent.
    pub fn load(dir: &Path) -> Result<Option<Self>, HarnessError> {
        let path = dir.join(MANIFEST_FILE);
        match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| HarnessError::ConfigInvalid(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(HarnessError::io(&path, e)),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<(), HarnessError> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())
    }

    /// The record for `name`, checked against the expected key and the
    /// artifact hashes on disk.
    pub fn verified(&self, dir: &Path, name: &str, key: &str) -> Result<&PhaseRecord, HarnessError> {
        let missing = |m: String| Err(HarnessError::MissingUpstream(m));
        let Some(record) = self.phases.get(name) else {
            return missing(format!("phase {name} has not run"));
        };
        if record.key != key {
            return missing(format!("phase {name} ran with a different configuration"));
        }
        for a in &record.artifacts {
            let path = dir.join(&a.path);
            let bytes = match std::fs::read(&path) {
                Ok(b) => b,
                Err(_) => return missing(format!("{} is missing", path.display())),
            };
            if sha256_hex(&bytes) != a.sha256 {
                return missing(format!("{} changed since phase {name} wrote it", path.display()));
            }
        }
        Ok(record)
    }
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| HarnessError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| HarnessError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| HarnessError::io(path, e))?;
    tmp.persist(path).map_err(|e| HarnessError::io(path, e.error))?;
    Ok(())
}

/// Collects the files of one phase and their hashes.
#[derive(Debug)]
pub(crate) struct ArtifactWriter<'a> {
    dir: &'a Path,
    written: Vec<Artifact>,
}

impl<'a> ArtifactWriter<'a> {
    pub(crate) fn new(dir: &'a Path) -> Self {
        ArtifactWriter {
            dir,
            written: Vec::new(),
        }
    }

    pub(crate) fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf, HarnessError> {
        let path = self.dir.join(rel);
        write_atomic(&path, bytes)?;
        self.written.push(Artifact {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(path)
    }

    pub(crate) fn finish(self) -> Vec<Artifact> {
        self.written
    }
}

/// Seconds per phase entry, merged into `dir/timings.json`.
pub fn record_timing(dir: &Path, name: &str, seconds: f64) -> Result<(), HarnessError> {
    let path = dir.join(TIMINGS_FILE);
    let mut timings: BTreeMap<String, f64> = std::fs::read_to_string(&path)
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .unwrap_or_default();
    timings.insert(name.to_string(), seconds);
    let text = serde_json::to_string_pretty(&timings).expect("timings serialize");
    write_atomic(&path, text.as_bytes())
}
