//! Run records: in-memory CSV tables, the summary document and the file
//! manifest written next to the data.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::HarnessError;

pub const SCHEMA_VERSION: u32 = 1;
pub const SUMMARY_FILE: &str = "summary.json";

/// A CSV table. Column names carry their SI unit as a suffix.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| HarnessError::Experiment(format!("csv buffer: {e}")))
    }
}

/// Shortest round-trip decimal; `NaN` for missing numeric values.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        format!("{x:e}")
    }
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map_or_else(|| "NaN".into(), num)
}

pub fn opt_bool(b: Option<bool>) -> String {
    b.map_or_else(String::new, |b| b.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    /// Some sweep points or replicas failed; their rows carry the error.
    Partial,
    Failed,
}

impl Status {
    pub fn from_counts(failed: usize, total: usize) -> Self {
        match failed {
            0 => Status::Ok,
            f if f == total => Status::Failed,
            _ => Status::Partial,
        }
    }
}

/// Everything an experiment produced, before it touches the filesystem.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub kind: &'static str,
    pub seed: u64,
    pub config: Value,
    pub status: Status,
    pub failures: Vec<String>,
    pub summary: Map<String, Value>,
    pub files: Vec<(String, Table)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub rows: usize,
    pub bytes: u64,
    pub sha256: String,
}

/// The summary document.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub run_id: String,
    pub kind: String,
    pub seed: u64,
    pub status: Status,
    pub config: Value,
    pub files: Vec<FileEntry>,
    pub summary: Map<String, Value>,
    pub failures: Vec<String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Identifier derived from the resolved configuration (which includes the
/// seed); identical inputs give identical ids.
pub fn run_id(config: &Value) -> String {
    let canonical = serde_json::to_vec(config).expect("json values serialize");
    sha256_hex(&canonical)[..16].to_string()
}

/// Default output directory under `runs/`.
pub fn default_out_dir(kind: &str, config: &Value) -> PathBuf {
    PathBuf::from("runs").join(format!("{kind}-{}", run_id(config)))
}

/// Writes every table plus `summary.json` into `dir`.
pub fn write_run(output: &RunOutput, dir: &Path) -> Result<RunRecord, HarnessError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| HarnessError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut files = Vec::with_capacity(output.files.len());
    for (name, table) in &output.files {
        let bytes = table.to_bytes()?;
        let path = dir.join(name);
        fs::write(&path, &bytes).map_err(io(&path))?;
        files.push(FileEntry {
            name: name.clone(),
            rows: table.rows.len(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(&bytes),
        });
    }
    let record = RunRecord {
        schema_version: SCHEMA_VERSION,
        run_id: run_id(&output.config),
        kind: output.kind.to_string(),
        seed: output.seed,
        status: output.status,
        config: output.config.clone(),
        files,
        summary: output.summary.clone(),
        failures: output.failures.clone(),
    };
    let mut text = serde_json::to_string_pretty(&record)?;
    text.push('\n');
    let path = dir.join(SUMMARY_FILE);
    fs::write(&path, text).map_err(io(&path))?;
    Ok(record)
}
