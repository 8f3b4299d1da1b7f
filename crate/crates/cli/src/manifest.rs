//! Reproducibility record written next to the results.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, Serialize)]
pub struct Seeds {
    pub master: u64,
    pub path_forward: u64,
    pub path_backward: u64,
    pub monte_carlo: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ok,
    Refused,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    pub wall_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub verb: String,
    pub config: ExperimentConfig,
    pub seeds: Seeds,
    pub stages: Vec<StageRecord>,
    /// Convergence and grid-refinement deltas.
    pub refinement: BTreeMap<String, f64>,
    pub results: BTreeMap<String, Value>,
    pub files: Vec<FileDigest>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes result files into one directory and tracks them for the manifest.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    /// Writes a CSV file with the given header and pre-formatted rows.
    pub fn csv<I>(&mut self, name: &str, header: &str, rows: I) -> std::io::Result<()>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let mut text = String::with_capacity(4096);
        text.push_str(header);
        text.push('\n');
        for row in rows {
            text.push_str(&row.join(","));
            text.push('\n');
        }
        self.write(name, text.as_bytes())
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        fs::File::create(self.root.join(name))?.write_all(bytes)?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(())
    }

    pub fn digests(&self) -> std::io::Result<Vec<FileDigest>> {
        self.files
            .iter()
            .map(|name| {
                let bytes = fs::read(self.root.join(name))?;
                Ok(FileDigest {
                    name: name.clone(),
                    bytes: bytes.len() as u64,
                    sha256: format!("{:x}", Sha256::digest(&bytes)),
                })
            })
            .collect()
    }
}

/// Fixed 17-significant-digit float format.
pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

/// Times a stage.
pub struct StageTimer {
    name: String,
    start: Instant,
}

impl StageTimer {
    pub fn start(name: &str) -> Self {
        log::info!("stage {name}");
        StageTimer {
            name: name.to_string(),
            start: Instant::now(),
        }
    }

    pub fn finish(self, status: StageStatus, note: Option<String>) -> StageRecord {
        let wall_seconds = self.start.elapsed().as_secs_f64();
        log::debug!("stage {} {:?} in {wall_seconds:.3}s", self.name, status);
        StageRecord {
            name: self.name,
            status,
            wall_seconds,
            note,
        }
    }
}

impl Manifest {
    pub fn write_to(&self, out: &OutputDir) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        fs::write(out.path().join(MANIFEST_FILE), text + "\n")
    }
}
