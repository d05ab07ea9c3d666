//! Artifact files and the run report.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Map, Value};

use crate::config::{Config, SCHEMA_VERSION};
use crate::error::{CliError, CliResult};

pub struct RunOutput {
    dir: PathBuf,
    artifacts: Vec<String>,
    started_ms: Option<u128>,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis())
}

impl RunOutput {
    /// Timestamps go into the report only when `timed`, so that untimed
    /// runs are byte-for-byte reproducible.
    pub fn create(dir: &Path, timed: bool) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            artifacts: Vec::new(),
            started_ms: timed.then(now_ms),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> CliResult<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        if !self.artifacts.iter().any(|a| a == name) {
            self.artifacts.push(name.to_string());
        }
        Ok(())
    }

    /// Writes `report.json` with the config, its hash, the seed, every
    /// artifact written so far and the command-specific `body`.
    pub fn finish(mut self, command: &str, cfg: &Config, passed: bool, body: Map<String, Value>) -> CliResult<()> {
        let mut report = Map::new();
        report.insert("schema_version".into(), json!(SCHEMA_VERSION));
        report.insert("command".into(), json!(command));
        report.insert("config_hash".into(), json!(cfg.hash()));
        report.insert("seed".into(), json!(cfg.seed()?));
        report.insert("rng".into(), json!(dcl_core::rng::RNG_NAME));
        report.insert("config".into(), json!(cfg.values()));
        report.insert("passed".into(), json!(passed));
        if let Some(start) = self.started_ms {
            report.insert("started_unix_ms".into(), json!(start as u64));
            report.insert("finished_unix_ms".into(), json!(now_ms() as u64));
        }
        report.extend(body);
        self.artifacts.push("report.json".into());
        report.insert("artifacts".into(), json!(self.artifacts));
        let text = serde_json::to_string_pretty(&Value::Object(report)).expect("report serialises");
        let path = self.dir.join("report.json");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
    }
}

/// CSV text from a fixed comma-separated header and rows of fields.
pub fn csv(header: &str, rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header.split(',')).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    let bytes = w.into_inner().expect("in-memory flush");
    String::from_utf8(bytes).expect("fields are UTF-8")
}
