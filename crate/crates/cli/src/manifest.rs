use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

/// Written next to every command's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: Value,
    pub seed: Option<u64>,
    pub version: String,
    pub git_revision: Option<String>,
    pub outputs: BTreeMap<String, PathBuf>,
    pub started_unix_ms: u128,
    pub wall_clock_secs: f64,
}

pub struct ManifestBuilder {
    manifest: RunManifest,
    started: Instant,
}

fn git_revision() -> Option<String> {
    let out = Command::new("git")
        .args(["rev-parse", "--short=12", "HEAD"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
}

impl ManifestBuilder {
    pub fn start(command: &str) -> Self {
        Self {
            manifest: RunManifest {
                command: command.to_string(),
                args: std::env::args().collect(),
                config: Value::Null,
                seed: None,
                version: env!("CARGO_PKG_VERSION").to_string(),
                git_revision: git_revision(),
                outputs: BTreeMap::new(),
                started_unix_ms: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_millis())
                    .unwrap_or(0),
                wall_clock_secs: 0.0,
            },
            started: Instant::now(),
        }
    }

    pub fn config<C: Serialize>(&mut self, c: &C) -> &mut Self {
        self.manifest.config = serde_json::to_value(c).unwrap_or(Value::Null);
        self
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.manifest.seed = Some(seed);
        self
    }

    pub fn output(&mut self, name: &str, path: &Path) -> &mut Self {
        self.manifest.outputs.insert(name.to_string(), path.to_path_buf());
        self
    }

    pub fn write(&mut self, path: &Path) -> Result<RunManifest, CliError> {
        self.output("manifest", path);
        self.manifest.wall_clock_secs = self.started.elapsed().as_secs_f64();
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        std::fs::write(path, text)
            .map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))?;
        Ok(self.manifest.clone())
    }
}

/// `<path>.manifest.json`.
pub fn beside(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}
