use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::failure::{io, Outcome};

pub const FILE_NAME: &str = "manifest.json";

/// Record of one command invocation, kept next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seed: u64,
    pub version: String,
    pub input_digest: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub started_unix_seconds: f64,
    /// Filled in when the command finishes.
    pub wall_clock_seconds: Option<f64>,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub notes: serde_json::Value,
    #[serde(skip)]
    started: Option<Instant>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: u64, input_digest: String, inputs: Vec<String>) -> Self {
        let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        RunManifest {
            command: command.to_string(),
            args: std::env::args().collect(),
            config,
            seed,
            version: concat!("vfi ", env!("CARGO_PKG_VERSION")).to_string(),
            input_digest,
            inputs,
            outputs: Vec::new(),
            started_unix_seconds: now,
            wall_clock_seconds: None,
            notes: serde_json::Value::Null,
            started: Some(Instant::now()),
        }
    }

    /// Writes `manifest.json` in `dir` through a temporary file and a rename,
    /// replacing any earlier manifest of the same run.
    pub fn write(&self, dir: &Path) -> Outcome<()> {
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let path = dir.join(FILE_NAME);
        let tmp = dir.join(format!(".{FILE_NAME}.tmp"));
        let text = serde_json::to_string_pretty(self).map_err(vfi_core::Error::from)?;
        fs::write(&tmp, text).map_err(|e| io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| io(&path, e))
    }

    pub fn finish(&mut self, dir: &Path) -> Outcome<()> {
        self.wall_clock_seconds = self.started.map(|s| s.elapsed().as_secs_f64());
        self.write(dir)
    }
}

/// Hashes a description of the inputs followed by the bytes of every file,
/// in the given order.
pub fn digest(description: &str, files: &[PathBuf]) -> Outcome<String> {
    let mut h = Sha256::new();
    h.update(description.as_bytes());
    for f in files {
        h.update(f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default().as_bytes());
        h.update(fs::read(f).map_err(|e| io(f, e))?);
    }
    Ok(hex::encode(h.finalize()))
}
