//! In-memory artifacts and their atomic commit to disk.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::CliError;

/// Bumped whenever a column or JSON key changes meaning.
pub const SCHEMA_VERSION: u32 = 1;

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn ser_err(e: impl std::fmt::Display) -> CliError {
    CliError::Serialize(e.to_string())
}

/// Files produced by one run, kept in memory until the run has succeeded.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    /// Rows with a header taken from the field names.
    pub fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r).map_err(ser_err)?;
        }
        let bytes = w.into_inner().map_err(ser_err)?;
        self.add(name, bytes);
        Ok(())
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(ser_err)?;
        bytes.push(b'\n');
        self.add(name, bytes);
        Ok(())
    }

    pub fn files(&self) -> &[(String, Vec<u8>)] {
        &self.files
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|f| f.0 == name).map(|f| f.1.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileDigest {
    pub name: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub artifact: String,
    pub artifact_version: String,
    pub subcommand: String,
    pub master_seed: u64,
    /// SHA-256 of the resolved config serialized as TOML.
    pub config_sha256: String,
    pub config: ExperimentConfig,
    pub files: Vec<FileDigest>,
}

impl Manifest {
    pub fn new(subcommand: &str, config: &ExperimentConfig, artifacts: &Artifacts) -> Result<Self, CliError> {
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            artifact: env!("CARGO_PKG_NAME").to_string(),
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.to_string(),
            master_seed: config.master_seed,
            config_sha256: sha256_hex(config.to_toml_string()?.as_bytes()),
            config: config.clone(),
            files: artifacts
                .files()
                .iter()
                .map(|(name, bytes)| FileDigest {
                    name: name.clone(),
                    bytes: bytes.len(),
                    sha256: sha256_hex(bytes),
                })
                .collect(),
        })
    }
}

fn io_err(context: String) -> impl FnOnce(std::io::Error) -> CliError {
    move |source| CliError::Io { context, source }
}

/// Writes every file into a staging directory inside `dir`, then renames
/// them into place. A failure before the renames leaves `dir` untouched.
pub fn commit(dir: &Path, artifacts: &Artifacts) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
    let staging = tempfile::Builder::new()
        .prefix(".staging-")
        .tempdir_in(dir)
        .map_err(io_err(format!("creating a staging directory in {}", dir.display())))?;
    for (name, bytes) in artifacts.files() {
        let path = staging.path().join(name);
        let mut f = File::create(&path).map_err(io_err(format!("creating {}", path.display())))?;
        f.write_all(bytes).map_err(io_err(format!("writing {}", path.display())))?;
        f.sync_all().map_err(io_err(format!("syncing {}", path.display())))?;
    }
    let mut out = Vec::with_capacity(artifacts.files().len());
    for (name, _) in artifacts.files() {
        let target = dir.join(name);
        fs::rename(staging.path().join(name), &target).map_err(io_err(format!("renaming into {}", target.display())))?;
        out.push(target);
    }
    Ok(out)
}
