use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct InputRecord {
    pub path: PathBuf,
    /// SHA-256 of `blob <len>\0<content>`, as git computes object ids.
    pub blob_sha256: String,
}

/// Provenance written next to every primary output as `<out>.manifest.json`.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: &'static str,
    pub command: String,
    pub flags: serde_json::Value,
    pub seed: u64,
    pub deterministic: bool,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<PathBuf>,
    pub wall_time_seconds: f64,
    pub passed: bool,
}

/// Git-style content hash of a file.
pub fn blob_hash(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let mut hasher = Sha256::new();
    hasher.update(format!("blob {}\0", bytes.len()).as_bytes());
    hasher.update(&bytes);
    Ok(hex::encode(hasher.finalize()))
}

pub struct ManifestBuilder {
    started: Instant,
    manifest: RunManifest,
}

impl ManifestBuilder {
    pub fn new<F: Serialize>(
        command: &str,
        flags: &F,
        seed: u64,
        deterministic: bool,
    ) -> anyhow::Result<Self> {
        Ok(Self {
            started: Instant::now(),
            manifest: RunManifest {
                tool_version: env!("CARGO_PKG_VERSION"),
                command: command.to_string(),
                flags: serde_json::to_value(flags)?,
                seed,
                deterministic,
                inputs: Vec::new(),
                outputs: Vec::new(),
                wall_time_seconds: 0.0,
                passed: false,
            },
        })
    }

    pub fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        let blob_sha256 = blob_hash(path)?;
        self.manifest.inputs.push(InputRecord {
            path: path.to_path_buf(),
            blob_sha256,
        });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.to_path_buf());
    }

    /// Writes `<primary>.manifest.json`.
    pub fn finish(mut self, primary: &Path, passed: bool) -> anyhow::Result<PathBuf> {
        self.manifest.wall_time_seconds = self.started.elapsed().as_secs_f64();
        self.manifest.passed = passed;
        let path = sidecar(primary, "manifest.json");
        let text = serde_json::to_string_pretty(&self.manifest)? + "\n";
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// `<path>.<suffix>`, keeping the original extension in the name.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".");
    name.push(suffix);
    path.with_file_name(name)
}
