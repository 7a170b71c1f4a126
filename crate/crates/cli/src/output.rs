//! Result directory with a checksummed manifest.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    /// RFC 3339; taken from `SOURCE_DATE_EPOCH` when set.
    pub timestamp: String,
    pub files: Vec<FileEntry>,
}

pub struct OutputDir {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl OutputDir {
    pub fn create(root: PathBuf) -> CliResult<OutputDir> {
        fs::create_dir_all(&root).map_err(|e| CliError::io(&root, e))?;
        Ok(OutputDir {
            root,
            files: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.root.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.files.retain(|f| f.name != name);
        self.files.push(FileEntry {
            name: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(bytes)),
        });
        Ok(())
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut bytes = serde_json::to_vec_pretty(value).expect("report serialises");
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    /// RFC 4180 with a header row, even when there are no records.
    pub fn csv<T: Serialize>(&mut self, name: &str, header: &[&str], rows: &[T]) -> CliResult<()> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .terminator(csv::Terminator::CRLF)
            .from_writer(Vec::new());
        let io = |e: csv::Error| CliError::io(self.root.join(name), std::io::Error::other(e));
        w.write_record(header).map_err(io)?;
        for r in rows {
            w.serialize(r).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| io(e.into_error().into()))?;
        self.write(name, &bytes)
    }

    /// Writes `config.json` and `manifest.json`.
    pub fn finish(mut self, command: &str, config: &RunConfig) -> CliResult<RunManifest> {
        self.write("config.json", format!("{}\n", config.to_json()).as_bytes())?;
        let mut files = self.files.clone();
        files.sort_by(|a, b| a.name.cmp(&b.name));
        let manifest = RunManifest {
            tool: "hedgesim",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config_hash: config.hash(),
            seed: config.rng.seed,
            timestamp: timestamp(),
            files,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serialises");
        bytes.push(b'\n');
        let path = self.root.join("manifest.json");
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}

fn timestamp() -> String {
    let at = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|s| DateTime::<Utc>::from_timestamp(s, 0))
        .unwrap_or_else(Utc::now);
    at.to_rfc3339_opts(SecondsFormat::Secs, true)
}
