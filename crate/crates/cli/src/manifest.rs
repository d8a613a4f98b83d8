//! Run manifests: everything needed to reproduce a report, kept apart from
//! the report itself so reports stay byte-identical across runs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use indexmap::IndexMap;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub argv: Vec<String>,
    pub config: Value,
    pub seed: Option<u64>,
    pub inputs: IndexMap<String, String>,
    pub outputs: Vec<String>,
    pub timings: IndexMap<String, f64>,
}

pub struct Recorder {
    start: Instant,
    manifest: Manifest,
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Recorder {
    pub fn new(command: &str, argv: &[String]) -> Self {
        Self {
            start: Instant::now(),
            manifest: Manifest {
                tool: "kfair",
                version: env!("CARGO_PKG_VERSION"),
                command: command.into(),
                argv: argv.to_vec(),
                config: Value::Null,
                seed: None,
                inputs: IndexMap::new(),
                outputs: Vec::new(),
                timings: IndexMap::new(),
            },
        }
    }

    pub fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        let digest = sha256_file(path)?;
        self.manifest.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn config(&mut self, config: &impl Serialize, seed: Option<u64>) {
        self.manifest.config = serde_json::to_value(config).unwrap_or(Value::Null);
        self.manifest.seed = seed;
    }

    pub fn timing(&mut self, name: &str, seconds: Option<f64>) {
        if let Some(s) = seconds {
            self.manifest.timings.insert(name.into(), s);
        }
    }

    /// Writes `value` as pretty JSON and records it as an output.
    pub fn write_json(&mut self, path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        write_file(path, text.as_bytes())?;
        self.manifest.outputs.push(path.display().to_string());
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.display().to_string());
    }

    /// Writes `<primary>.manifest.json`.
    pub fn finish(mut self, primary: &Path) -> anyhow::Result<PathBuf> {
        self.manifest
            .timings
            .insert("wall_seconds".into(), self.start.elapsed().as_secs_f64());
        let path = manifest_path(primary);
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        write_file(&path, text.as_bytes())?;
        Ok(path)
    }
}

pub fn manifest_path(primary: &Path) -> PathBuf {
    let mut name = primary.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    primary.with_file_name(name)
}

fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}
