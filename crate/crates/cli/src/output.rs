//! Run artifacts: manifest, metrics CSV and table, hashing.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use svoflow::metrics::MetricsReport;
use svoflow::rollout::{EpisodeLog, ENGINE_VERSION, LOG_SCHEMA_VERSION};

use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Serialize)]
pub struct EpisodeSeed {
    pub label: String,
    pub case_id: u32,
    pub repeat: u32,
    pub seed: u64,
}

/// Everything needed to re-run a command bit-exactly.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub engine_version: &'static str,
    pub log_schema_version: u32,
    pub command: String,
    pub argv: Vec<String>,
    pub config_file: Option<PathBuf>,
    pub config_file_sha256: Option<String>,
    /// Hash of the resolved configuration (after flag overrides).
    pub config_sha256: String,
    pub resolved_config: serde_json::Value,
    pub workers: usize,
    pub seeds: Vec<EpisodeSeed>,
    /// SHA-256 of every input and output file, by name.
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, resolved: &impl Serialize, workers: usize) -> Result<Self, CliError> {
        let resolved_config = serde_json::to_value(resolved).map_err(|e| CliError::Runtime(e.to_string()))?;
        let canonical = serde_json::to_vec(&resolved_config).map_err(|e| CliError::Runtime(e.to_string()))?;
        Ok(Self {
            engine_version: ENGINE_VERSION,
            log_schema_version: LOG_SCHEMA_VERSION,
            command: command.to_string(),
            argv: std::env::args().collect(),
            config_file: None,
            config_file_sha256: None,
            config_sha256: sha256_hex(&canonical),
            resolved_config,
            workers,
            seeds: Vec::new(),
            files: BTreeMap::new(),
        })
    }

    pub fn add_logs(&mut self, label: &str, logs: &[EpisodeLog]) {
        self.seeds.extend(logs.iter().map(|l| EpisodeSeed {
            label: label.to_string(),
            case_id: l.header.case.case_id,
            repeat: l.header.repeat,
            seed: l.header.seed,
        }));
    }

    pub fn add_file(&mut self, name: &str, path: &Path) -> Result<(), CliError> {
        self.files.insert(name.to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Runtime(e.to_string()))?;
        write_text(path, &(text + "\n"))
    }
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn metrics_csv(rows: &[(String, MetricsReport)]) -> String {
    let mut out = String::from(MetricsReport::CSV_HEADER);
    out.push('\n');
    for (label, r) in rows {
        out.push_str(&r.csv_row(label));
        out.push('\n');
    }
    out
}
