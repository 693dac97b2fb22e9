//! Run provenance: every stage appends a record with its resolved
//! configuration, input hashes, output hashes, and timing to
//! `manifest.json` in the output directory. Reruns with identical inputs
//! and seeds reproduce identical output hashes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub completed_unix: u64,
    pub duration_seconds: f64,
    /// Resolved configuration snapshot for the stage.
    pub config: BTreeMap<String, String>,
    /// Input path → sha256.
    pub inputs: BTreeMap<String, String>,
    /// Output file name (relative to the output directory) → sha256.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn new() -> Self {
        Self { tool_version: env!("CARGO_PKG_VERSION").to_string(), stages: Vec::new() }
    }

    /// Load the manifest in `out_dir`, or start a fresh one.
    pub fn load_or_new(out_dir: &Path) -> Result<Self, CliError> {
        let path = out_dir.join(MANIFEST_NAME);
        if !path.exists() {
            return Ok(Self::new());
        }
        let text = fs::read_to_string(&path)?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::data(format!("malformed {}: {e}", path.display())))
    }

    pub fn save(&self, out_dir: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(out_dir.join(MANIFEST_NAME), text)?;
        Ok(())
    }

    /// The most recent record for a stage, if any.
    pub fn last_stage(&self, stage: &str) -> Option<&StageRecord> {
        self.stages.iter().rev().find(|s| s.stage == stage)
    }
}

impl Default for RunManifest {
    fn default() -> Self {
        Self::new()
    }
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    format!("{:x}", h.finalize())
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut file = fs::File::open(path)
        .map_err(|e| CliError::data(format!("cannot hash {}: {e}", path.display())))?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(format!("{:x}", h.finalize()))
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Per-stage bookkeeping: collects hashed inputs, guards outputs against
/// accidental overwrites, and appends the finished record to the manifest.
pub struct StageRun {
    out_dir: PathBuf,
    force: bool,
    started: std::time::Instant,
    config: BTreeMap<String, String>,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

impl StageRun {
    pub fn new(
        out_dir: &Path,
        force: bool,
        config: BTreeMap<String, String>,
    ) -> Result<Self, CliError> {
        fs::create_dir_all(out_dir)?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            force,
            started: std::time::Instant::now(),
            config,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    /// Record (and hash) an input file; it must exist.
    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let hash = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), hash);
        Ok(())
    }

    /// Reserve an output file in the output directory. Artifacts are
    /// append-only: an existing file is an error unless `--force` is given.
    pub fn artifact(&mut self, name: &str) -> Result<PathBuf, CliError> {
        let path = self.out_dir.join(name);
        if path.exists() && !self.force {
            return Err(CliError::data(format!(
                "output {} already exists; rerun with --force to overwrite",
                path.display()
            )));
        }
        self.outputs.push(name.to_string());
        Ok(path)
    }

    /// Hash every reserved output and append the stage record.
    pub fn finish(self, stage: &str) -> Result<(), CliError> {
        let mut outputs = BTreeMap::new();
        for name in &self.outputs {
            let path = self.out_dir.join(name);
            if !path.exists() {
                return Err(CliError::data(format!(
                    "stage {stage} reserved output {name} but never wrote it"
                )));
            }
            outputs.insert(name.clone(), sha256_file(&path)?);
        }
        let mut manifest = RunManifest::load_or_new(&self.out_dir)?;
        manifest.stages.push(StageRecord {
            stage: stage.to_string(),
            completed_unix: unix_now(),
            duration_seconds: self.started.elapsed().as_secs_f64(),
            config: self.config,
            inputs: self.inputs,
            outputs,
        });
        manifest.save(&self.out_dir)
    }
}
