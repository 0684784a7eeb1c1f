//! Output files and their run manifests.
//!
//! Every data file `<out>/<name>.<ext>` has a sibling `<out>/<name>.manifest.json`.
//! Data files never carry timestamps, so they depend only on the inputs, the
//! seed and the version; the manifest holds the wall-clock details.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub const VERSION: &str = env!("RBMP_VERSION");

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub version: &'static str,
    pub started: String,
    pub finished: String,
    pub outputs: Vec<PathBuf>,
}

/// Collects output paths for one invocation and writes the manifest last.
pub struct Run {
    command: String,
    config: serde_json::Value,
    seed: Option<u64>,
    started: String,
    dir: PathBuf,
    name: String,
    outputs: Vec<PathBuf>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl Run {
    pub fn start(command: &str, config: &impl Serialize, seed: Option<u64>, dir: &Path, name: &str) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        Ok(Self {
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            seed,
            started: now(),
            dir: dir.to_path_buf(),
            name: name.to_string(),
            outputs: Vec::new(),
        })
    }

    pub fn manifest_name(&self) -> String {
        format!("{}.manifest.json", self.name)
    }

    fn path(&mut self, suffix: &str) -> PathBuf {
        let p = self.dir.join(format!("{}{suffix}", self.name));
        self.outputs.push(p.clone());
        p
    }

    pub fn write_csv<T: Serialize>(&mut self, suffix: &str, rows: impl IntoIterator<Item = T>) -> CliResult<PathBuf> {
        let path = self.path(suffix);
        let mut w = csv::Writer::from_path(&path)?;
        for row in rows {
            w.serialize(row)?;
        }
        w.flush().map_err(CliError::io(&path))?;
        Ok(path)
    }

    pub fn write_json(&mut self, suffix: &str, value: &impl Serialize) -> CliResult<PathBuf> {
        let path = self.path(suffix);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text).map_err(CliError::io(&path))?;
        Ok(path)
    }

    pub fn finish(self) -> CliResult<PathBuf> {
        let path = self.dir.join(self.manifest_name());
        let manifest = RunManifest {
            command: self.command,
            args: std::env::args().collect(),
            config: self.config,
            seed: self.seed,
            version: VERSION,
            started: self.started,
            finished: now(),
            outputs: self.outputs,
        };
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        fs::write(&path, text).map_err(CliError::io(&path))?;
        Ok(path)
    }
}
