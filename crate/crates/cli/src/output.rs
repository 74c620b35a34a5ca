//! Run directories: `<base>/<task>-<hash12>/` with one CSV per table and
//! `record.json`, every file written to a temporary name and renamed.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::Format;
use crate::report::{Invariant, TaskOutput};

/// Version of the record and CSV layouts.
pub const ARTIFACT_VERSION: u32 = 1;

/// Overrides `output.directory` when set.
pub const OUTPUT_DIR_ENV: &str = "PFLAB_OUTPUT_DIR";

#[derive(Debug, Serialize)]
pub struct RunRecord<'a> {
    pub config_hash: &'a str,
    pub artifact_version: u32,
    pub task: &'a str,
    pub report: &'a serde_json::Map<String, serde_json::Value>,
    pub invariants: &'a [Invariant],
    pub failing: Vec<String>,
    pub pass: bool,
    pub tables: Vec<String>,
    pub wall_time_s: f64,
}

pub fn base_dir(configured: &str) -> PathBuf {
    std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(configured))
}

pub fn run_dir(base: &Path, task: &str, hash: &str) -> PathBuf {
    base.join(format!("{task}-{}", &hash[..12.min(hash.len())]))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn csv_bytes(header: &[String], rows: &[Vec<f64>]) -> io::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|x| x.to_string()))?;
    }
    w.into_inner().map_err(|e| io::Error::other(e.to_string()))
}

/// Writes tables, the canonical configuration and finally the record.
pub fn write_run(
    dir: &Path,
    hash: &str,
    task: &str,
    config: &impl Serialize,
    out: &TaskOutput,
    formats: &[Format],
    wall_time_s: f64,
) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut tables = vec![];
    if formats.contains(&Format::Csv) {
        for t in &out.tables {
            let file = format!("{}.csv", t.name);
            write_atomic(&dir.join(&file), &csv_bytes(&t.header, &t.rows)?)?;
            tables.push(file);
        }
    }
    if formats.contains(&Format::Json) {
        write_atomic(&dir.join("config.json"), &serde_json::to_vec_pretty(config)?)?;
        let failing = out.failing();
        let record = RunRecord {
            config_hash: hash,
            artifact_version: ARTIFACT_VERSION,
            task,
            report: &out.report,
            invariants: &out.invariants,
            pass: failing.is_empty(),
            failing,
            tables,
            wall_time_s,
        };
        write_atomic(&dir.join("record.json"), &serde_json::to_vec_pretty(&record)?)?;
    }
    Ok(())
}
