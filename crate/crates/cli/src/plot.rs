//! Merges per-run CSV artifacts into tidy tables for external plotting.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::report::{RunReport, REPORT_FILE};

/// Per-run source table and the columns copied from it.
struct Table {
    subcommand: &'static str,
    source: &'static str,
    output: &'static str,
    columns: &'static [&'static str],
}

const TABLES: [Table; 2] = [
    Table {
        subcommand: "kernel-decay",
        source: "dispersive.csv",
        output: "kernel_decay.csv",
        columns: &["dt", "region", "absK", "majorant"],
    },
    Table {
        subcommand: "strichartz-scaling",
        source: "levels.csv",
        output: "strichartz_levels.csv",
        columns: &["pair", "order", "j", "normalized", "bound"],
    },
];

struct Run {
    dir: PathBuf,
    report: RunReport,
}

fn load_run(path: &Path) -> CliResult<Run> {
    let (dir, file) = if path.is_dir() {
        (path.to_path_buf(), path.join(REPORT_FILE))
    } else {
        (
            path.parent().unwrap_or(Path::new(".")).to_path_buf(),
            path.to_path_buf(),
        )
    };
    let text = std::fs::read_to_string(&file)?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let report: RunReport = serde_path_to_error::deserialize(de).map_err(|e| {
        CliError::schema(
            &file.display().to_string(),
            &e.path().to_string(),
            e.inner().to_string(),
        )
    })?;
    Ok(Run { dir, report })
}

/// Reads `columns` of a run CSV, failing with the name of the first missing
/// or non-numeric column.
fn read_columns(path: &Path, columns: &[&str]) -> CliResult<Vec<Vec<String>>> {
    let file = path.display().to_string();
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::schema(&file, "", e.to_string()))?
        .clone();
    let index: Vec<usize> = columns
        .iter()
        .map(|c| {
            headers
                .iter()
                .position(|h| h == *c)
                .ok_or_else(|| CliError::schema(&file, c, "missing column"))
        })
        .collect::<CliResult<_>>()?;
    let mut rows = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::schema(&file, "", format!("row {}: {e}", row + 1)))?;
        let mut values = Vec::with_capacity(columns.len());
        for (&i, c) in index.iter().zip(columns) {
            let value = record
                .get(i)
                .ok_or_else(|| CliError::schema(&file, c, format!("row {}: missing value", row + 1)))?;
            if *c != "region" && *c != "pair" && value.parse::<f64>().is_err() {
                return Err(CliError::schema(
                    &file,
                    c,
                    format!("row {}: `{value}` is not a number", row + 1),
                ));
            }
            values.push(value.to_string());
        }
        rows.push(values);
    }
    Ok(rows)
}

#[derive(Serialize)]
struct Bundle {
    file: String,
    rows: usize,
}

/// Writes one tidy table per run kind found among `reports` into `out`.
///
/// Kernel tables carry `j` from each run summary. With more than one run,
/// every table gains an `epsilon` column.
pub fn emit_plot_data(reports: &[PathBuf], out: &Path) -> CliResult<Vec<PathBuf>> {
    let runs = reports.iter().map(|p| load_run(p)).collect::<CliResult<Vec<_>>>()?;
    let merged = runs.len() > 1;
    let mut tables: BTreeMap<&str, (Vec<String>, Vec<Vec<String>>)> = BTreeMap::new();
    for run in &runs {
        let Some(table) = TABLES.iter().find(|t| t.subcommand == run.report.subcommand) else {
            continue;
        };
        let kernel = table.subcommand == "kernel-decay";
        let mut header: Vec<String> = Vec::new();
        if merged {
            header.push("epsilon".into());
        }
        if kernel {
            header.push("j".into());
        }
        header.extend(table.columns.iter().map(|c| c.to_string()));
        let j = if kernel {
            let j = run.report.summary.get("j").and_then(|v| v.as_u64()).ok_or_else(|| {
                CliError::schema(
                    &run.dir.join(REPORT_FILE).display().to_string(),
                    "summary.j",
                    "missing level",
                )
            })?;
            Some(j.to_string())
        } else {
            None
        };
        let entry = tables.entry(table.output).or_insert_with(|| (header, Vec::new()));
        for values in read_columns(&run.dir.join(table.source), table.columns)? {
            let mut row = Vec::new();
            if merged {
                row.push(run.report.epsilon.to_string());
            }
            row.extend(j.clone());
            row.extend(values);
            entry.1.push(row);
        }
    }
    std::fs::create_dir_all(out)?;
    let mut written = Vec::new();
    let mut index = Vec::new();
    for (name, (header, rows)) in &tables {
        let path = out.join(name);
        let mut writer = csv::Writer::from_path(&path)?;
        writer.write_record(header)?;
        for row in rows {
            writer.write_record(row)?;
        }
        writer.flush()?;
        index.push(Bundle {
            file: name.to_string(),
            rows: rows.len(),
        });
        written.push(path);
    }
    let mut bytes = serde_json::to_vec_pretty(&index)?;
    bytes.push(b'\n');
    std::fs::write(out.join("plot_index.json"), bytes)?;
    Ok(written)
}
