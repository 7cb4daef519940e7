//! Reproducibility records embedded in every artifact.

use std::path::{Path, PathBuf};

use deepcontrast_core::RunConfig;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Regular files under `dir`, recursively, in sorted order.
pub fn walk_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::data(dir, e))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::data(dir, e))?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            out.extend(walk_files(&p)?);
        } else {
            out.push(p);
        }
    }
    Ok(out)
}

pub fn digest_file(path: &Path) -> Result<InputDigest, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::data(path, e))?;
    Ok(InputDigest { path: path.display().to_string(), sha256: sha256_hex(&bytes) })
}

/// One digest per file, for a file or a whole directory.
pub fn digest_path(path: &Path) -> Result<Vec<InputDigest>, CliError> {
    if path.is_dir() {
        walk_files(path)?.iter().map(|p| digest_file(p)).collect()
    } else {
        Ok(vec![digest_file(path)?])
    }
}

#[derive(Debug, Clone)]
pub struct Provenance {
    command: &'static str,
    args: Vec<(&'static str, String)>,
    config: Value,
    inputs: Vec<InputDigest>,
}

impl Provenance {
    pub fn new(command: &'static str, config: &RunConfig) -> Self {
        Provenance { command, args: Vec::new(), config: config.to_json(), inputs: Vec::new() }
    }

    pub fn arg(mut self, name: &'static str, value: impl ToString) -> Self {
        self.args.push((name, value.to_string()));
        self
    }

    pub fn add_inputs(&mut self, digests: impl IntoIterator<Item = InputDigest>) {
        self.inputs.extend(digests);
    }

    pub fn with_inputs(&self, digests: impl IntoIterator<Item = InputDigest>) -> Self {
        let mut p = self.clone();
        p.add_inputs(digests);
        p
    }

    pub fn to_json(&self) -> Value {
        let args: serde_json::Map<String, Value> =
            self.args.iter().map(|(k, v)| (k.to_string(), Value::String(v.clone()))).collect();
        let inputs: Vec<Value> = self.inputs.iter().map(|d| json!({"path": d.path, "sha256": d.sha256})).collect();
        json!({
            "tool": "deepcontrast",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "args": args,
            "config": self.config,
            "inputs": inputs,
        })
    }

    /// Single-line JSON for comment headers and text chunks.
    pub fn to_line(&self) -> String {
        format!("provenance: {}", self.to_json())
    }
}
