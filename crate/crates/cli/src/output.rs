use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use driftlab::io::{sha256_hex, FileDigest, RunManifest};
use serde::Serialize;

/// Everything a command produces, held in memory until the command has
/// succeeded.
pub struct Outputs {
    command: String,
    stdout: Vec<u8>,
    files: Vec<(String, Vec<u8>)>,
    inputs: Vec<FileDigest>,
}

impl Outputs {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            stdout: Vec::new(),
            files: Vec::new(),
            inputs: Vec::new(),
        }
    }

    pub fn print(&mut self, text: impl AsRef<str>) {
        self.stdout.extend_from_slice(text.as_ref().as_bytes());
        if !text.as_ref().ends_with('\n') {
            self.stdout.push(b'\n');
        }
    }

    pub fn print_bytes(&mut self, bytes: &[u8]) {
        self.stdout.extend_from_slice(bytes);
    }

    pub fn file(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    pub fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.file(name, bytes);
        Ok(())
    }

    /// Reads an input file and records its digest.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.record_input(path, &bytes);
        Ok(bytes)
    }

    pub fn record_input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(bytes),
        });
    }

    pub fn stdout(&self) -> &[u8] {
        &self.stdout
    }

    /// Writes every file plus `manifest.json` into `dir`. Files written
    /// before a failure are removed again.
    pub fn commit(&self, dir: &Path, config: serde_json::Value, seed: u64) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let manifest = RunManifest {
            tool: "driftlab".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command.clone(),
            config,
            seed,
            rng_scheme: driftlab::rng::SCHEME.into(),
            inputs: self.inputs.clone(),
            outputs: self
                .files
                .iter()
                .map(|(name, bytes)| FileDigest {
                    path: name.clone(),
                    sha256: sha256_hex(bytes),
                })
                .collect(),
        };
        let mut manifest_bytes = serde_json::to_vec_pretty(&manifest)?;
        manifest_bytes.push(b'\n');

        let mut written: Vec<PathBuf> = Vec::new();
        let all = self
            .files
            .iter()
            .map(|(n, b)| (n.as_str(), b.as_slice()))
            .chain([("manifest.json", manifest_bytes.as_slice())]);
        for (name, bytes) in all {
            let path = dir.join(name);
            if let Err(e) = fs::write(&path, bytes) {
                for p in &written {
                    let _ = fs::remove_file(p);
                }
                let _ = fs::remove_file(&path);
                return Err(e).with_context(|| format!("writing {}", path.display()));
            }
            written.push(path);
        }
        Ok(())
    }
}
