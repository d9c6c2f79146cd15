//! Writes a run's trajectory, manifest and summary to a directory.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::config::Config;
use crate::scenario::{Failure, RunResult};

pub const TRAJECTORY: &str = "trajectory.csv";
pub const COLUMNS: &str = "columns.csv";
pub const MANIFEST: &str = "manifest.txt";
pub const SUMMARY: &str = "summary.txt";

pub fn write_run(dir: &Path, cfg: &Config, res: &RunResult) -> Result<(), Failure> {
    fs::create_dir_all(dir)?;

    let mut w = csv::Writer::from_path(dir.join(TRAJECTORY))?;
    w.write_record(res.columns.iter().map(|c| c.0.as_str()))?;
    for row in &res.rows {
        w.write_record(row.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join(COLUMNS))?;
    w.write_record(["column", "description"])?;
    for (name, desc) in &res.columns {
        w.write_record([name, desc])?;
    }
    w.flush()?;

    let mut m = String::new();
    for (k, v) in &res.manifest {
        let _ = writeln!(m, "{k} = {v}");
    }
    m.push_str("\n[config]\n");
    m.push_str(&cfg.echo());
    m.push_str("\n[defaults]\n");
    m.push_str(&cfg.echo_defaults());
    fs::write(dir.join(MANIFEST), m)?;

    fs::write(dir.join(SUMMARY), summary_text(res))?;
    Ok(())
}

pub fn summary_text(res: &RunResult) -> String {
    let mut s = String::new();
    for (k, v) in &res.summary {
        let _ = writeln!(s, "{k} = {v}");
    }
    for c in &res.checks {
        let _ = writeln!(s, "check {} {}: {}", c.name, if c.pass { "PASS" } else { "FAIL" }, c.detail);
    }
    s
}
