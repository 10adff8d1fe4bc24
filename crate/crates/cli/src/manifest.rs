//! Run manifest: what went in, what came out, and with which settings.
//!
//! Manifests carry no timestamps, host names or thread counts, so two runs
//! with the same inputs and flags write identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Serialize)]
struct FileDigest {
    role: String,
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    subcommand: &'a str,
    seed: Option<u64>,
    config: &'a serde_json::Value,
    inputs: &'a [FileDigest],
    artifacts: &'a [FileDigest],
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects inputs and artifacts of one subcommand run.
pub struct Run {
    out_dir: PathBuf,
    inputs: Vec<FileDigest>,
    artifacts: Vec<FileDigest>,
}

impl Run {
    pub fn new(out_dir: &Path) -> Result<Self> {
        fs::create_dir_all(out_dir)
            .map_err(|e| CliError::Internal(format!("cannot create {}: {e}", out_dir.display())))?;
        Ok(Run {
            out_dir: out_dir.to_path_buf(),
            inputs: Vec::new(),
            artifacts: Vec::new(),
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    /// Reads an input file and records its digest. Inputs inside the output
    /// directory (models, the split) are recorded relative to it.
    pub fn read_input(&mut self, role: &str, path: &Path) -> Result<Vec<u8>> {
        let bytes =
            fs::read(path).map_err(|e| CliError::Invalid(format!("cannot read {role} {}: {e}", path.display())))?;
        let shown = path.strip_prefix(&self.out_dir).unwrap_or(path);
        self.inputs.push(FileDigest {
            role: role.to_owned(),
            path: shown.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(bytes)
    }

    pub fn read_input_text(&mut self, role: &str, path: &Path) -> Result<String> {
        let bytes = self.read_input(role, path)?;
        String::from_utf8(bytes).map_err(|_| CliError::Invalid(format!("{role} {} is not UTF-8", path.display())))
    }

    /// Writes `name` under the output directory and records its digest.
    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let bytes = contents.as_ref();
        let path = self.out_dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))?;
        self.artifacts.push(FileDigest {
            role: "artifact".into(),
            path: name.to_owned(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn finish(self, subcommand: &str, seed: Option<u64>, config: &serde_json::Value) -> Result<()> {
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand,
            seed,
            config,
            inputs: &self.inputs,
            artifacts: &self.artifacts,
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Internal(e.to_string()))?;
        text.push('\n');
        let path = self.out_dir.join(format!("{subcommand}.manifest.json"));
        fs::write(&path, text).map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))
    }
}
