//! Run-directory bookkeeping: idempotent writes and the stage-status file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const STATUS_FILE: &str = "stage_status.json";

/// Writes `bytes` unless the file already holds exactly them, so reruns
/// leave unchanged outputs (and their timestamps) alone. Returns whether
/// the file was written.
pub fn write_if_changed(path: &Path, bytes: &[u8]) -> Result<bool, CliError> {
    if let Ok(existing) = std::fs::read(path) {
        if existing == bytes {
            return Ok(false);
        }
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::internal(format!("create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::internal(format!("write {}: {e}", path.display())))?;
    Ok(true)
}

/// Accumulates a stage's input fingerprint.
#[derive(Default)]
pub struct Fingerprint(Sha256);

impl Fingerprint {
    pub fn new(stage: &str) -> Self {
        let mut f = Fingerprint(Sha256::new());
        f.text(stage);
        f
    }

    pub fn text(&mut self, s: &str) -> &mut Self {
        self.0.update((s.len() as u64).to_le_bytes());
        self.0.update(s.as_bytes());
        self
    }

    pub fn json<T: Serialize>(&mut self, value: &T) -> &mut Self {
        let s = serde_json::to_string(value).expect("config serializes");
        self.text(&s)
    }

    pub fn file(&mut self, path: &Path) -> Result<&mut Self, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        self.text(&path.display().to_string());
        self.0.update((bytes.len() as u64).to_le_bytes());
        self.0.update(&bytes);
        Ok(self)
    }

    /// Every regular file below `dir`, in sorted order.
    pub fn dir(&mut self, dir: &Path) -> Result<&mut Self, CliError> {
        for p in list_files(dir)? {
            self.file(&p)?;
        }
        Ok(self)
    }

    pub fn finish(self) -> String {
        hex::encode(self.0.finalize())
    }
}

pub fn list_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let rd = std::fs::read_dir(&d).map_err(|e| CliError::input(format!("{}: {e}", d.display())))?;
        for entry in rd {
            let entry = entry.map_err(|e| CliError::input(format!("{}: {e}", d.display())))?;
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub fingerprint: String,
    /// Paths relative to the run directory.
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageStatus {
    pub stages: BTreeMap<String, StageRecord>,
}

impl StageStatus {
    pub fn load(run_dir: &Path) -> StageStatus {
        std::fs::read(run_dir.join(STATUS_FILE))
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok())
            .unwrap_or_default()
    }

    pub fn save(&self, run_dir: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).expect("status serializes");
        text.push('\n');
        write_if_changed(&run_dir.join(STATUS_FILE), text.as_bytes())?;
        Ok(())
    }

    /// True when the stage last ran with this fingerprint and all of its
    /// outputs are still present.
    pub fn is_current(&self, run_dir: &Path, stage: &str, fingerprint: &str) -> bool {
        self.stages
            .get(stage)
            .is_some_and(|r| r.fingerprint == fingerprint && r.outputs.iter().all(|o| run_dir.join(o).is_file()))
    }

    pub fn record(&mut self, run_dir: &Path, stage: &str, fingerprint: String, outputs: &[PathBuf]) {
        let mut rel: Vec<String> = outputs
            .iter()
            .map(|p| p.strip_prefix(run_dir).unwrap_or(p).to_string_lossy().replace('\\', "/"))
            .collect();
        rel.sort();
        self.stages.insert(stage.to_string(), StageRecord { fingerprint, outputs: rel });
    }
}
