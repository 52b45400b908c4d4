use std::path::{Path, PathBuf};
use std::time::Instant;

use fluidpert::{Error, Result};
use serde::Serialize;
use serde_json::Value;

/// What was run, with which inputs and options, and how the solver fared.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub inputs: Vec<PathBuf>,
    pub options: Value,
    pub version: &'static str,
    pub wall_time_s: f64,
    pub diagnostics: Value,
}

pub struct Timer {
    start: Instant,
}

impl Timer {
    pub fn start() -> Self {
        Timer {
            start: Instant::now(),
        }
    }

    pub fn manifest(
        &self,
        command: &str,
        argv: &[String],
        inputs: &[&Path],
        options: Value,
        diagnostics: Value,
    ) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            argv: argv.to_vec(),
            inputs: inputs.iter().map(|p| p.to_path_buf()).collect(),
            options,
            version: env!("CARGO_PKG_VERSION"),
            wall_time_s: self.start.elapsed().as_secs_f64(),
            diagnostics,
        }
    }
}

pub fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    write(path, &(text + "\n"))
}

/// `results.csv` gets `results.csv.manifest.json`.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|s| s.to_os_string())
        .unwrap_or_default();
    name.push(".manifest.json");
    path.with_file_name(name)
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))
}
