use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// One `/intervene` call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub timestamp_ms: u128,
    pub session_token: String,
    pub patient_id: String,
    pub old_remark_sha256: String,
    pub new_remark_sha256: String,
    pub old_probability: f64,
    pub new_probability: f64,
}

pub fn text_digest(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// Append-only JSON-lines log. Without a file it only counts.
pub struct AuditLog {
    path: Option<PathBuf>,
    inner: Mutex<(Option<File>, u64)>,
}

impl AuditLog {
    pub fn open(path: Option<&Path>) -> std::io::Result<Self> {
        let file = match path {
            Some(p) => Some(OpenOptions::new().create(true).append(true).open(p)?),
            None => None,
        };
        Ok(Self {
            path: path.map(Path::to_path_buf),
            inner: Mutex::new((file, 0)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn append(&self, entry: &AuditEntry) -> std::io::Result<()> {
        let mut guard = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(f) = guard.0.as_mut() {
            let line = serde_json::to_string(entry).map_err(std::io::Error::other)?;
            writeln!(f, "{line}")?;
            f.flush()?;
        }
        guard.1 += 1;
        Ok(())
    }

    /// Entries appended since start-up.
    pub fn count(&self) -> u64 {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).1
    }

    pub fn read_all(path: &Path) -> std::io::Result<Vec<AuditEntry>> {
        std::fs::read_to_string(path)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(std::io::Error::other))
            .collect()
    }
}
