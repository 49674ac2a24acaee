//! Atomic file output, report formats and run manifests.

use super::CliError;
use crate::analysis::Table;
use serde::Serialize;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use tempfile::NamedTempFile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    fn ext(&self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Writes via a temporary file in the target directory, renamed into place
/// only after `fill` succeeds, so readers never see partial output.
pub fn write_atomic<T>(path: &Path, fill: impl FnOnce(&mut BufWriter<&mut NamedTempFile>) -> Result<T, CliError>) -> Result<T, CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| io_err(path, e))?;
    let value = {
        let mut w = BufWriter::new(&mut tmp);
        let v = fill(&mut w)?;
        w.flush().map_err(|e| io_err(path, e))?;
        v
    };
    tmp.as_file().sync_all().map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(value)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, |w| w.write_all(text.as_bytes()).map_err(|e| io_err(path, e)))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

/// Writes `table` as `<dir>/<table.name>.<ext>` and returns the path.
pub fn write_table(dir: &Path, table: &Table, format: Format) -> Result<PathBuf, CliError> {
    let path = dir.join(format!("{}.{}", table.name, format.ext()));
    match format {
        Format::Json => write_json(&path, &table.to_json())?,
        Format::Csv => write_atomic(&path, |w| table.write_csv(w).map_err(|e| io_err(&path, e)))?,
    }
    Ok(path)
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// Provenance of one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config_path: Option<String>,
    pub config_fingerprint: Option<String>,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub threads: usize,
    pub wall_clock_s: f64,
    pub n_trials: Option<u64>,
    pub trials_per_sec: Option<f64>,
    pub records: Option<u64>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            tool_version: concat!("homsim ", env!("CARGO_PKG_VERSION")).into(),
            command: command.into(),
            config_path: None,
            config_fingerprint: None,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            threads: rayon::current_num_threads(),
            wall_clock_s: 0.0,
            n_trials: None,
            trials_per_sec: None,
            records: None,
        }
    }
}

pub fn display(p: &Path) -> String {
    p.display().to_string()
}
