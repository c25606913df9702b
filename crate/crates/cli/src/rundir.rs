//! Run-directory management: config snapshots, hash guards, and metadata
//! headers for output files.

use std::io::Write;
use std::path::{Path, PathBuf};

use extract_core::error::{Error, Result};
use serde::Serialize;

use crate::config::ExperimentConfig;

pub struct RunDir {
    pub path: PathBuf,
    pub config_hash: String,
    pub fairness_hash: String,
}

/// Creates (or re-enters with `--force`) a run directory, freezing the
/// resolved config and its hash. A rerun with the same config hash is
/// refused unless forced; a different config may never silently reuse a
/// directory.
pub fn prepare_run_dir(config: &ExperimentConfig, force: bool) -> Result<RunDir> {
    let path = config.out_dir.clone();
    let hash = config.config_hash();
    let hash_file = path.join("config_hash.txt");
    if hash_file.exists() {
        let existing = std::fs::read_to_string(&hash_file)?.trim().to_string();
        if existing == hash && !force {
            return Err(Error::InvalidArgument(format!(
                "run directory {} already holds a completed run with this exact config \
                 (hash {hash}); pass --force to rerun",
                path.display()
            )));
        }
        if existing != hash && !force {
            return Err(Error::InvalidArgument(format!(
                "run directory {} holds a run with a different config (hash {existing}); \
                 choose another out_dir or pass --force to overwrite",
                path.display()
            )));
        }
    }
    std::fs::create_dir_all(&path)?;
    let mut f = std::fs::File::create(path.join("config.json"))?;
    serde_json::to_writer_pretty(&mut f, config)?;
    f.write_all(b"\n")?;
    std::fs::write(&hash_file, format!("{hash}\n"))?;
    Ok(RunDir {
        path,
        config_hash: hash,
        fairness_hash: config.fairness_hash(),
    })
}

/// Header record placed as the first line of every JSONL log.
#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct LogMeta {
    pub config_hash: String,
    pub fairness_hash: String,
    pub method: String,
    pub seed: u64,
}

pub struct JsonlWriter {
    file: std::io::BufWriter<std::fs::File>,
}

impl JsonlWriter {
    pub fn create(path: &Path, meta: &LogMeta) -> Result<Self> {
        let file = std::fs::File::create(path)?;
        let mut w = Self {
            file: std::io::BufWriter::new(file),
        };
        w.write(&serde_json::json!({ "meta": meta }))?;
        Ok(w)
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(&mut self.file, record)?;
        self.file.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.file.flush()?;
        Ok(())
    }
}

/// Reads a JSONL file, returning the meta header and the data records.
pub fn read_jsonl(path: &Path) -> Result<(Option<LogMeta>, Vec<serde_json::Value>)> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::MissingArtifact(format!("log {}: {e}", path.display()))
    })?;
    let mut meta = None;
    let mut records = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line)?;
        if let Some(m) = value.get("meta") {
            meta = Some(serde_json::from_value(m.clone())?);
        } else {
            records.push(value);
        }
    }
    Ok((meta, records))
}
