use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

pub const MANIFEST: &str = "manifest.json";

/// Collects the files a run writes so the manifest can list their hashes.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// `name` is relative to the root and may contain subdirectories.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, bytes)?;
        self.files.push(PathBuf::from(name));
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(std::io::Error::other)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub library_version: String,
    pub config: RunConfig,
    pub seeds: Vec<u64>,
    pub wall_clock_seconds: f64,
    /// Named stage timings; the only non-reproducible part of a run.
    pub timings: Vec<(String, f64)>,
    pub files: Vec<FileEntry>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    pub fn build(
        out: &OutputDir,
        config: &RunConfig,
        seeds: Vec<u64>,
        wall_clock: Duration,
        timings: Vec<(String, f64)>,
    ) -> Result<Self, CliError> {
        let files = out
            .files()
            .iter()
            .map(|p| {
                let full = out.root().join(p);
                Ok(FileEntry {
                    path: p.clone(),
                    sha256: sha256_file(&full)?,
                    bytes: std::fs::metadata(&full)?.len(),
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        Ok(Self {
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            seeds,
            wall_clock_seconds: wall_clock.as_secs_f64(),
            timings,
            files,
        })
    }

    pub fn write(&self, root: &Path) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(self).map_err(std::io::Error::other)?;
        bytes.push(b'\n');
        std::fs::write(root.join(MANIFEST), bytes)?;
        Ok(())
    }
}
