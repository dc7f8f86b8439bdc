//! Run reports, check records and the artifact writer.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::error::CliResult;

pub const REPORT_FILE: &str = "report.json";
pub const TIMINGS_FILE: &str = "timings.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    AtMost,
    AtLeast,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub limit: f64,
    pub comparison: Comparison,
    /// Distance to the limit, positive when the check passes.
    pub margin: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Check {
            name: name.into(),
            passed: value <= limit,
            value,
            limit,
            comparison: Comparison::AtMost,
            margin: limit - value,
            note: None,
        }
    }

    pub fn at_least(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Check {
            name: name.into(),
            passed: value >= limit,
            value,
            limit,
            comparison: Comparison::AtLeast,
            margin: value - limit,
            note: None,
        }
    }

    /// `|value - target| <= tolerance`.
    pub fn within(name: impl Into<String>, value: f64, target: f64, tolerance: f64) -> Self {
        let mut check = Check::at_most(name, (value - target).abs(), tolerance);
        check.note = Some(format!("value {value} against target {target}"));
        check
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub subcommand: String,
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub epsilon: f64,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    /// Pipeline-specific summary values.
    pub summary: serde_json::Value,
    pub artifacts: Vec<ManifestEntry>,
    /// Wall-clock timings live in this sibling file so the report stays reproducible.
    pub timings_file: String,
}

impl RunReport {
    pub fn failed_checks(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Everything a pipeline produces, held in memory until the run succeeds.
#[derive(Debug, Default)]
pub struct Outcome {
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    pub summary: BTreeMap<String, serde_json::Value>,
    pub files: Vec<(String, Vec<u8>)>,
    pub timings: Timings,
}

impl Outcome {
    pub fn check(&mut self, check: Check) {
        self.checks.push(check);
    }

    pub fn summarize(&mut self, key: &str, value: impl Serialize) {
        self.summary.insert(
            key.to_string(),
            serde_json::to_value(value).expect("summary value serializes"),
        );
    }

    pub fn file(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn json_file(&mut self, name: &str, value: &impl Serialize) -> CliResult<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.file(name, bytes);
        Ok(())
    }
}

#[derive(Debug, Default, Serialize)]
pub struct Timings {
    pub stages: Vec<(String, f64)>,
}

impl Timings {
    /// Runs `f`, recording its wall-clock time under `stage`.
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.stages.push((stage.to_string(), start.elapsed().as_secs_f64()));
        out
    }

    pub fn total(&self) -> f64 {
        self.stages.iter().map(|s| s.1).sum()
    }
}

/// CSV bytes with a header row.
pub fn csv_bytes<R: Serialize>(rows: &[R], header: &[&str]) -> CliResult<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        writer.write_record(header)?;
    }
    for row in rows {
        writer.serialize(row)?;
    }
    Ok(writer.into_inner().map_err(|e| e.into_error())?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Writes the artifacts, the report and the timings into `dir`.
pub fn write_run(dir: &Path, mut report: RunReport, outcome: Outcome) -> CliResult<(PathBuf, RunReport)> {
    std::fs::create_dir_all(dir)?;
    report.artifacts.clear();
    for (name, bytes) in &outcome.files {
        std::fs::write(dir.join(name), bytes)?;
        report.artifacts.push(ManifestEntry {
            file: name.clone(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(bytes),
        });
    }
    let timings: BTreeMap<&str, f64> = outcome.timings.stages.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    let mut bytes = serde_json::to_vec_pretty(&serde_json::json!({
        "stages": timings,
        "total_seconds": outcome.timings.total(),
    }))?;
    bytes.push(b'\n');
    std::fs::write(dir.join(TIMINGS_FILE), bytes)?;
    let path = dir.join(REPORT_FILE);
    let mut bytes = serde_json::to_vec_pretty(&report)?;
    bytes.push(b'\n');
    std::fs::write(&path, bytes)?;
    Ok((path, report))
}
