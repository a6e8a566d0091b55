//! Output directory handling: CSV tables stamped with the config hash and
//! seed, the resolved config, and the JSON run record.
//!
//! Every row is flushed as soon as it is written, so a failed run leaves
//! the rows produced before the failure on disk.

use std::fs::File;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

/// Hex SHA-256 of the canonical TOML form of `config`.
pub fn config_hash(config: &ExperimentConfig) -> String {
    hex::encode(Sha256::digest(config.to_toml().as_bytes()))
}

/// Shortest round-trip decimal form; identical inputs always print identically.
pub fn num(x: f64) -> String {
    format!("{x}")
}

pub struct OutputDir {
    dir: PathBuf,
    hash: String,
    seed: u64,
    files: Vec<String>,
}

impl OutputDir {
    /// Creates the directory and writes the resolved `config.toml`.
    pub fn create(config: &ExperimentConfig) -> Result<Self> {
        let dir = config.output_dir.clone();
        std::fs::create_dir_all(&dir).map_err(|source| CliError::Io {
            path: dir.clone(),
            source,
        })?;
        let mut out = Self {
            dir,
            hash: config_hash(config),
            seed: config.seed,
            files: Vec::new(),
        };
        out.write_text("config.toml", &config.to_toml())?;
        Ok(out)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// Files written so far, in order.
    pub fn files(&self) -> &[String] {
        &self.files
    }

    fn path(&mut self, name: &str) -> PathBuf {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        self.dir.join(name)
    }

    fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.path(name);
        std::fs::write(&path, text).map_err(|source| CliError::Io { path, source })
    }

    /// Opens `name` and writes the header `config_hash, seed, columns…`.
    pub fn table(&mut self, name: &str, columns: &[&str]) -> Result<Table> {
        let path = self.path(name);
        let file = File::create(&path).map_err(|source| CliError::Io { path, source })?;
        let mut table = Table {
            writer: csv::Writer::from_writer(file),
            hash: self.hash.clone(),
            seed: self.seed.to_string(),
        };
        let header = ["config_hash", "seed"]
            .into_iter()
            .chain(columns.iter().copied());
        table.writer.write_record(header)?;
        table.writer.flush().map_err(csv::Error::from)?;
        Ok(table)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        self.write_text(name, &text)
    }
}

pub struct Table {
    writer: csv::Writer<File>,
    hash: String,
    seed: String,
}

impl Table {
    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_field(&self.hash)?;
        self.writer.write_field(&self.seed)?;
        for f in fields {
            self.writer.write_field(f)?;
        }
        self.writer.write_record(None::<&[u8]>)?;
        self.writer.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}
