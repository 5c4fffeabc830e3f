//! Writing run directories. Every file goes through a temporary file in the
//! target directory and is renamed into place, so a crashed run never leaves
//! a half-written artifact behind.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde_json::{json, Value};
use tempfile::NamedTempFile;

use crate::scenario::Scenario;
use crate::tasks::{Artifact, RunError, RunOutput};

pub const SUMMARY_FILE: &str = "summary.json";

pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(dir.join(name)).map_err(|e| e.error)?;
    Ok(())
}

/// What the summary records besides the results themselves.
#[derive(Debug, Clone)]
pub struct RunMeta {
    pub wall_time_s: f64,
    pub threads: usize,
}

pub fn summary(scenario: &Scenario, outcome: &Result<RunOutput, RunError>, meta: &RunMeta) -> Value {
    let mut s = json!({
        "library_version": finsler_vortex::VERSION,
        "scenario": scenario,
        "task": scenario.task.name(),
        "wall_time_s": meta.wall_time_s,
        "threads": meta.threads,
    });
    match outcome {
        Ok(out) => {
            s["status"] = json!("ok");
            s["results"] = out.results.clone();
            s["artifacts"] = json!(out.artifacts.iter().map(|a| a.name.as_str()).collect::<Vec<_>>());
        }
        Err(e) => {
            s["status"] = json!("numerical_failure");
            s["error"] = json!(e.to_string());
            s["artifacts"] = json!([]);
        }
    }
    s
}

/// Writes the CSV artifacts (on success) and the summary into `dir`.
pub fn write_run(
    dir: &Path,
    scenario: &Scenario,
    outcome: &Result<RunOutput, RunError>,
    meta: &RunMeta,
) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    if let Ok(out) = outcome {
        for Artifact { name, contents } in &out.artifacts {
            write_atomic(dir, name, contents.as_bytes())?;
        }
    }
    let mut text = serde_json::to_string_pretty(&summary(scenario, outcome, meta)).map_err(io::Error::other)?;
    text.push('\n');
    write_atomic(dir, SUMMARY_FILE, text.as_bytes())
}
