//! Output directories and their `manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use tierlab_core::{RunConfig, TRACE_FORMAT_VERSION};

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, Serialize)]
pub struct FileDigest {
    pub name: String,
    pub sha256: String,
}

/// Reproducibility record. Only the two wall-clock fields vary between
/// identical runs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub trace_format_version: u32,
    pub subcommand: String,
    pub config_sha256: Option<String>,
    pub parameters: BTreeMap<String, String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_at_unix_ms: u64,
    pub finished_at_unix_ms: u64,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Collects the files a subcommand writes and finishes with the manifest.
pub struct OutDir {
    dir: PathBuf,
    manifest: RunManifest,
}

impl OutDir {
    pub fn create(dir: &Path, subcommand: &str) -> std::io::Result<OutDir> {
        fs::create_dir_all(dir)?;
        Ok(OutDir {
            dir: dir.to_owned(),
            manifest: RunManifest {
                tool: "tierlab",
                tool_version: env!("CARGO_PKG_VERSION"),
                trace_format_version: TRACE_FORMAT_VERSION,
                subcommand: subcommand.to_owned(),
                config_sha256: None,
                parameters: BTreeMap::new(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                started_at_unix_ms: now_ms(),
                finished_at_unix_ms: 0,
            },
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn param(&mut self, key: &str, value: impl ToString) {
        self.manifest
            .parameters
            .insert(key.to_owned(), value.to_string());
    }

    pub fn inputs(&mut self, inputs: &[FileDigest]) {
        self.manifest.inputs.extend_from_slice(inputs);
    }

    /// Writes `config.resolved.json` and records its hash.
    pub fn config(&mut self, cfg: &RunConfig) -> std::io::Result<()> {
        let text = cfg.to_json();
        self.manifest.config_sha256 = Some(sha256_hex(text.as_bytes()));
        self.put("config.resolved.json", text.into_bytes())
    }

    pub fn put(&mut self, name: &str, bytes: Vec<u8>) -> std::io::Result<()> {
        fs::write(self.dir.join(name), &bytes)?;
        self.record(name, &bytes);
        Ok(())
    }

    /// Records a file something else already wrote.
    pub fn adopt(&mut self, name: &str) -> std::io::Result<()> {
        let bytes = fs::read(self.dir.join(name))?;
        self.record(name, &bytes);
        Ok(())
    }

    fn record(&mut self, name: &str, bytes: &[u8]) {
        self.manifest.outputs.retain(|f| f.name != name);
        self.manifest.outputs.push(FileDigest {
            name: name.to_owned(),
            sha256: sha256_hex(bytes),
        });
    }

    pub fn finish(mut self) -> std::io::Result<()> {
        self.manifest.outputs.sort_by(|a, b| a.name.cmp(&b.name));
        self.manifest.finished_at_unix_ms = now_ms();
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(self.dir.join(MANIFEST), text + "\n")
    }
}
