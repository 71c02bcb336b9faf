//! Atomic multi-file outputs and run manifests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::failure::{CmdResult, Failure, WithPath};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> CmdResult<String> {
    Ok(sha256_hex(&fs::read(path).at(path)?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    /// SHA-256 of the canonical JSON of the parsed command options.
    pub config_hash: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub seed: Option<u64>,
    pub version: String,
    pub wall_time_secs: f64,
}

/// Files that become visible together: everything is written to temporary
/// names first and renamed once all writes succeeded.
pub struct OutputSet {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl OutputSet {
    pub fn new() -> Self {
        Self { files: Vec::new() }
    }

    pub fn add(&mut self, path: impl Into<PathBuf>, bytes: Vec<u8>) {
        self.files.push((path.into(), bytes));
    }

    pub fn add_json<T: Serialize>(&mut self, path: impl Into<PathBuf>, value: &T) -> CmdResult {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.add(path, bytes);
        Ok(())
    }

    pub fn digests(&self) -> Vec<FileDigest> {
        self.files
            .iter()
            .map(|(p, b)| FileDigest {
                path: p.clone(),
                sha256: sha256_hex(b),
            })
            .collect()
    }

    pub fn commit(self) -> CmdResult {
        let mut staged = Vec::with_capacity(self.files.len());
        let result = (|| {
            for (path, bytes) in &self.files {
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(dir).at(dir)?;
                }
                let tmp = temp_name(path);
                fs::write(&tmp, bytes).at(&tmp)?;
                staged.push((tmp, path.clone()));
            }
            for (tmp, path) in &staged {
                fs::rename(tmp, path).at(path)?;
            }
            Ok(())
        })();
        if result.is_err() {
            for (tmp, _) in &staged {
                let _ = fs::remove_file(tmp);
            }
        }
        result
    }
}

fn temp_name(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp-{}", std::process::id()))
}

/// Collects provenance while a command runs.
pub struct Provenance {
    command: &'static str,
    config_hash: String,
    inputs: Vec<FileDigest>,
    seed: Option<u64>,
    started: Instant,
}

impl Provenance {
    pub fn start<C: Serialize>(command: &'static str, config: &C, seed: Option<u64>) -> CmdResult<Self> {
        Ok(Self {
            command,
            config_hash: sha256_hex(&serde_json::to_vec(config)?),
            inputs: Vec::new(),
            seed,
            started: Instant::now(),
        })
    }

    pub fn input(&mut self, path: &Path) -> CmdResult {
        self.inputs.push(FileDigest {
            path: path.to_path_buf(),
            sha256: file_digest(path)?,
        });
        Ok(())
    }

    /// Adds `manifest.json` under `dir` describing every file in `out`.
    pub fn finish(self, out: &mut OutputSet, dir: &Path) -> CmdResult {
        let manifest = RunManifest {
            command: self.command.to_string(),
            args: std::env::args().skip(1).collect(),
            config_hash: self.config_hash,
            inputs: self.inputs,
            outputs: out.digests(),
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_secs: self.started.elapsed().as_secs_f64(),
        };
        out.add_json(dir.join(MANIFEST_FILE), &manifest)
    }
}

/// Recomputes every recorded digest; returns the mismatching paths.
pub fn verify_manifest(path: &Path) -> CmdResult<Vec<String>> {
    let manifest: RunManifest = serde_json::from_slice(&fs::read(path).at(path)?).at(path)?;
    let mut bad = Vec::new();
    for d in manifest.inputs.iter().chain(&manifest.outputs) {
        match file_digest(&d.path) {
            Ok(h) if h == d.sha256 => {}
            Ok(_) => bad.push(format!("{}: digest mismatch", d.path.display())),
            Err(Failure { message, .. }) => bad.push(message),
        }
    }
    Ok(bad)
}
