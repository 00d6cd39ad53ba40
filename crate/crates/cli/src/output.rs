//! Output directories: atomic artifact writes and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mmgcn::fsio;
use serde::{Deserialize, Serialize};

use crate::config::sha256_hex;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config_digest: String,
    /// SHA-256 of each input file, keyed by a role-qualified name.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of every file written, keyed by file name.
    pub artifacts: BTreeMap<String, String>,
    pub version: String,
}

pub struct Outputs {
    dir: PathBuf,
    artifacts: BTreeMap<String, String>,
    inputs: BTreeMap<String, String>,
}

impl Outputs {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| mmgcn::Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            artifacts: BTreeMap::new(),
            inputs: BTreeMap::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fsio::write_atomic(&self.path(name), bytes)?;
        self.artifacts.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).context("serializing output")?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Hash a file that was written by other means.
    pub fn record(&mut self, name: &str) -> Result<()> {
        let bytes = fsio::read(&self.path(name))?;
        self.artifacts.insert(name.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    /// Record every regular file currently in the directory except the
    /// manifest.
    pub fn record_all(&mut self) -> Result<()> {
        for name in list_files(&self.dir)? {
            if name != MANIFEST {
                self.record(&name)?;
            }
        }
        Ok(())
    }

    pub fn input_file(&mut self, role: &str, path: &Path) -> Result<()> {
        let bytes = fsio::read(path)?;
        self.inputs.insert(role.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    /// Hash every file of an input directory, keyed `role/name`.
    pub fn input_dir(&mut self, role: &str, dir: &Path) -> Result<()> {
        for name in list_files(dir)? {
            self.input_file(&format!("{role}/{name}"), &dir.join(&name))?;
        }
        Ok(())
    }

    pub fn finish(mut self, command: &str, seed: u64, config_digest: String) -> Result<Manifest> {
        let manifest = Manifest {
            command: command.to_string(),
            seed,
            config_digest,
            inputs: std::mem::take(&mut self.inputs),
            artifacts: std::mem::take(&mut self.artifacts),
            version: env!("CARGO_PKG_VERSION").to_string(),
        };
        let mut text = serde_json::to_string_pretty(&manifest).context("serializing manifest")?;
        text.push('\n');
        fsio::write_atomic(&self.path(MANIFEST), text.as_bytes())?;
        Ok(manifest)
    }
}

/// Sorted names of the regular, non-hidden files in `dir`.
pub fn list_files(dir: &Path) -> Result<Vec<String>> {
    let io = |e| mmgcn::Error::Io {
        path: dir.to_path_buf(),
        source: e,
    };
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let entry = entry.map_err(io)?;
        if entry.file_type().map_err(io)?.is_file() {
            let name = entry.file_name().to_string_lossy().into_owned();
            if !name.starts_with('.') {
                names.push(name);
            }
        }
    }
    names.sort();
    Ok(names)
}
