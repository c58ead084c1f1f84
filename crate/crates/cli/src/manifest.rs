//! Output directories with a content-hashed manifest written last.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Effective configuration after command-line overrides.
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub artifacts: Vec<Artifact>,
    pub timings: BTreeMap<String, f64>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::input(format!("{}: {}", path.display(), e.error)))?;
    Ok(())
}

/// Tracks every file a command emits.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>) -> CliResult<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| CliError::input(format!("{}: {e}", root.display())))?;
        Ok(OutputDir { root, files: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write(&mut self, rel: &str, bytes: impl AsRef<[u8]>) -> CliResult<()> {
        write_atomic(&self.path(rel), bytes.as_ref())?;
        if !self.files.iter().any(|f| f == rel) {
            self.files.push(rel.to_string());
        }
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::input(e.to_string()))?;
        text.push('\n');
        self.write(rel, text)
    }

    /// Records files written by a nested output directory.
    pub fn adopt(&mut self, child: &OutputDir) -> CliResult<()> {
        let prefix = child.root.strip_prefix(&self.root).map_err(|_| CliError::input("nested output outside its parent"))?;
        let prefix = prefix.to_string_lossy().replace('\\', "/");
        for f in child.files.iter().map(String::as_str).chain([MANIFEST_NAME]) {
            self.files.push(format!("{prefix}/{f}"));
        }
        Ok(())
    }

    /// Hashes every emitted file and writes the manifest.
    pub fn finish(
        self,
        command: &str,
        config: serde_json::Value,
        seeds: BTreeMap<String, u64>,
        timings: BTreeMap<String, f64>,
    ) -> CliResult<RunManifest> {
        let mut artifacts = Vec::new();
        for rel in &self.files {
            let bytes = fs::read(self.root.join(rel))?;
            artifacts.push(Artifact { path: rel.clone(), sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 });
        }
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
            seeds,
            artifacts,
            timings,
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::input(e.to_string()))?;
        text.push('\n');
        write_atomic(&self.root.join(MANIFEST_NAME), text.as_bytes())?;
        Ok(manifest)
    }
}
