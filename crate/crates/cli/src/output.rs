//! Report schema and atomic file output.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::AuditConfig;

/// Bumped whenever a field of [`AuditReport`] or a payload changes meaning.
pub const SCHEMA_VERSION: u32 = 1;
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub schema_version: u32,
    pub experiment: String,
    pub toolkit_version: String,
    pub config: AuditConfig,
    pub payload: serde_json::Value,
    /// Only field that differs between identical runs.
    pub wall_time_secs: f64,
}

/// Writes `bytes` to `path` through a temporary file in the same directory,
/// so the final path only ever holds complete content.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("temp file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// CSV text from a header and rows of already formatted fields.
pub fn csv_text<I, R>(header: &[&str], rows: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

/// Collects output files for one run; nothing touches the output directory
/// until [`Outputs::commit`].
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, name: impl Into<PathBuf>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn names(&self) -> Vec<String> {
        self.files.iter().map(|(p, _)| p.display().to_string()).collect()
    }

    /// Writes every file atomically, then the report last.
    pub fn commit(self, out: &Path, report: &AuditReport) -> Result<PathBuf> {
        for (name, bytes) in &self.files {
            write_atomic(&out.join(name), bytes)?;
        }
        let path = out.join(REPORT_FILE);
        let mut text = serde_json::to_vec_pretty(report)?;
        text.push(b'\n');
        write_atomic(&path, &text)?;
        Ok(path)
    }
}
