use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::failure::Failure;

/// `run.json` + `"trace.csv"` -> `run.trace.csv`.
pub fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    out.with_extension(suffix)
}

pub fn read_input(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::io(format!("cannot read {}: {e}", path.display())))
}

/// Writes through a temporary file in the destination directory and renames
/// it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let io = |e: std::io::Error| Failure::io(format!("cannot write {}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

#[derive(Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Serialize)]
pub struct RunManifest {
    pub command: &'static str,
    pub version: &'static str,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub seed: Option<u64>,
    pub artifacts: Vec<String>,
    pub duration_secs: f64,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Collects what a command read and wrote; turned into a manifest at exit.
pub struct Run {
    pub command: &'static str,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    inputs: Vec<InputDigest>,
    artifacts: Vec<String>,
    started: Instant,
}

impl Run {
    pub fn new(command: &'static str) -> Self {
        Run {
            command,
            config: serde_json::Value::Null,
            seed: None,
            inputs: Vec::new(),
            artifacts: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>, Failure> {
        let bytes = read_input(path)?;
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(bytes)
    }

    pub fn read_string(&mut self, path: &Path) -> Result<String, Failure> {
        let bytes = self.read(path)?;
        String::from_utf8(bytes)
            .map_err(|_| Failure::parse(format!("{} is not valid UTF-8", path.display())))
    }

    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<(), Failure> {
        write_atomic(path, bytes)?;
        log::info!("wrote {}", path.display());
        self.artifacts.push(path.display().to_string());
        Ok(())
    }

    pub fn finish(self, out: &Path, outcome: &Result<(), Failure>) -> Result<(), Failure> {
        let manifest = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            config: self.config,
            inputs: self.inputs,
            seed: self.seed,
            artifacts: self.artifacts,
            duration_secs: self.started.elapsed().as_secs_f64(),
            exit_code: outcome.as_ref().map_or_else(|f| f.code, |_| 0),
            error: outcome.as_ref().err().map(|f| f.message.clone()),
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        write_atomic(&sidecar(out, "manifest.json"), text.as_bytes())
    }
}
