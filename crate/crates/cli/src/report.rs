//! The machine-readable `run_report.json` written next to every output.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use xembody::dataset::dataset_digest;

use crate::config::RunConfig;

pub const REPORT_FILE: &str = "run_report.json";

#[derive(Debug, Serialize)]
pub struct OutputEntry {
    pub path: PathBuf,
    pub trajectories: usize,
    pub frames: usize,
    /// SHA-256 of the dataset manifest.
    pub digest: String,
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub command: String,
    pub version: &'static str,
    pub workers: usize,
    pub config: RunConfig,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<OutputEntry>,
    /// Trajectories that failed and were left out of the output.
    pub failures: Vec<Value>,
    pub details: Value,
    pub elapsed_seconds: f64,
    #[serde(skip)]
    started: Option<Instant>,
}

impl RunReport {
    pub fn new(command: &str, config: &RunConfig, workers: usize) -> Self {
        Self {
            command: command.to_owned(),
            version: env!("CARGO_PKG_VERSION"),
            workers,
            config: config.clone(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            failures: Vec::new(),
            details: Value::Null,
            elapsed_seconds: 0.0,
            started: Some(Instant::now()),
        }
    }

    pub fn add_output(&mut self, path: &Path, trajectories: usize, frames: usize) -> Result<()> {
        let digest = dataset_digest(path)?;
        self.outputs.push(OutputEntry {
            path: path.to_owned(),
            trajectories,
            frames,
            digest,
        });
        Ok(())
    }

    /// Writes the report into `dir`.
    pub fn write(mut self, dir: &Path) -> Result<()> {
        if let Some(t) = self.started {
            self.elapsed_seconds = t.elapsed().as_secs_f64();
        }
        let path = dir.join(REPORT_FILE);
        let text = serde_json::to_string_pretty(&self)?;
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
