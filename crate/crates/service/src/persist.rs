//! On-disk layout of a session: `events.jsonl`, `telemetry.jsonl` and a
//! periodic `snapshot.json`, all under `<root>/sessions/<id>/`.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{ErrorKind, ServiceError};
use crate::events::LogEntry;
use crate::state::SessionState;
use crate::telemetry::TelemetryEvent;

pub const EVENTS_FILE: &str = "events.jsonl";
pub const TELEMETRY_FILE: &str = "telemetry.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub last_seq: u64,
    pub state: SessionState,
}

#[derive(Debug, Clone)]
pub struct SessionFiles {
    dir: PathBuf,
}

/// Contents read back from a session directory.
#[derive(Debug)]
pub struct Loaded {
    pub snapshot: Option<Snapshot>,
    pub log: Vec<LogEntry>,
    pub telemetry: Vec<TelemetryEvent>,
}

fn storage(path: &Path, e: impl std::fmt::Display) -> ServiceError {
    ServiceError::new(ErrorKind::Storage, format!("{}: {e}", path.display()))
}

pub fn sessions_root(root: &Path) -> PathBuf {
    root.join("sessions")
}

impl SessionFiles {
    pub fn create(root: &Path, id: &str) -> Result<Self, ServiceError> {
        let dir = sessions_root(root).join(id);
        fs::create_dir_all(&dir).map_err(|e| storage(&dir, e))?;
        Ok(Self { dir })
    }

    pub fn open(dir: PathBuf) -> Self {
        Self { dir }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn append_event(&self, entry: &LogEntry) -> Result<(), ServiceError> {
        self.append(EVENTS_FILE, entry)
    }

    pub fn append_telemetry(&self, event: &TelemetryEvent) -> Result<(), ServiceError> {
        self.append(TELEMETRY_FILE, event)
    }

    fn append<T: Serialize>(&self, file: &str, item: &T) -> Result<(), ServiceError> {
        let path = self.dir.join(file);
        let mut line = serde_json::to_string(item).map_err(|e| storage(&path, e))?;
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| storage(&path, e))?;
        f.write_all(line.as_bytes()).map_err(|e| storage(&path, e))
    }

    /// Replaces the snapshot atomically.
    pub fn write_snapshot(&self, snapshot: &Snapshot) -> Result<(), ServiceError> {
        let path = self.dir.join(SNAPSHOT_FILE);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(|e| storage(&path, e))?;
        serde_json::to_writer(&mut tmp, snapshot).map_err(|e| storage(&path, e))?;
        tmp.persist(&path).map_err(|e| storage(&path, e))?;
        Ok(())
    }

    pub fn load(&self) -> Result<Loaded, ServiceError> {
        let snap_path = self.dir.join(SNAPSHOT_FILE);
        let snapshot = match fs::read(&snap_path) {
            Ok(bytes) => Some(serde_json::from_slice(&bytes).map_err(|e| storage(&snap_path, e))?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(storage(&snap_path, e)),
        };
        Ok(Loaded {
            snapshot,
            log: read_jsonl(&self.dir.join(EVENTS_FILE))?,
            telemetry: read_jsonl(&self.dir.join(TELEMETRY_FILE))?,
        })
    }
}

/// Reads a JSON-lines file. A torn final line, left by a crash mid-append,
/// is dropped; a bad line anywhere else is an error.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ServiceError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(storage(path, e)),
    };
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|e| storage(path, e))?;
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(e) if i + 1 == lines.len() => {
                tracing::warn!(path = %path.display(), error = %e, "dropping torn final line");
            }
            Err(e) => return Err(storage(path, format!("line {}: {e}", i + 1))),
        }
    }
    Ok(out)
}
