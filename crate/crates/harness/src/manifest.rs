//! Per-run metadata document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use shelab_core::verify::TestVerdict;

use crate::config::RunConfig;
use crate::error::HarnessError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    /// Finished; no verdicts were requested.
    Complete,
    Passed,
    Failed,
    /// Some replicas failed; the manifest lists what was produced.
    Partial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaSeed {
    pub replica: u64,
    pub seed: u64,
    pub stream: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub sha256: String,
}

/// Ensemble statistics of `u(t, x)` at one point and of the total mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalSummary {
    pub time: f64,
    pub x: f64,
    pub mean: f64,
    pub variance: f64,
    pub se: f64,
    pub mass_mean: f64,
    pub mass_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub statistic: String,
    pub estimate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub command: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub scheme: String,
    pub coefficients: String,
    pub seeds: Vec<ReplicaSeed>,
    pub files: Vec<FileRecord>,
    pub wall_clock_secs: f64,
    pub status: RunStatus,
    #[serde(default)]
    pub failures: Vec<String>,
    #[serde(default)]
    pub verdicts: Vec<TestVerdict>,
    #[serde(default)]
    pub marginals: Vec<MarginalSummary>,
    #[serde(default)]
    pub sweep: Vec<SweepRow>,
}

impl RunManifest {
    pub fn passed(&self) -> bool {
        matches!(self.status, RunStatus::Complete | RunStatus::Passed)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = std::fs::read_to_string(&path)
            .map_err(|e| HarnessError::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("malformed manifest {}: {e}", path.display())))
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, HarnessError> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serialises");
        std::fs::write(&path, text + "\n")?;
        Ok(path)
    }

    /// Checks that every recorded file exists under `dir` with its recorded digest.
    pub fn check_files(&self, dir: &Path) -> Result<(), HarnessError> {
        for f in &self.files {
            let p = dir.join(&f.path);
            let bytes = std::fs::read(&p)
                .map_err(|e| HarnessError::Config(format!("manifest file {} missing: {e}", p.display())))?;
            if sha256_hex(&bytes) != f.sha256 {
                return Err(HarnessError::Config(format!(
                    "manifest file {} does not match its recorded checksum",
                    p.display()
                )));
            }
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
