use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::GatewayError;

/// File that new recordings are appended to inside a fixture directory.
pub const RECORD_FILE_NAME: &str = "recorded.jsonl";

/// One line of a replay store file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub fingerprint: String,
    pub content: String,
}

/// Fingerprint → content map, optionally backed by a directory of JSONL
/// files. Reads are shared; appends are serialized.
#[derive(Debug, Default)]
pub struct ReplayStore {
    entries: RwLock<HashMap<String, String>>,
    append_to: Option<PathBuf>,
    append_lock: Mutex<()>,
}

impl ReplayStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads every `*.jsonl` file in `dir` (sorted by name). New recordings go
    /// to `dir/recorded.jsonl`. The directory is created if missing.
    pub fn open_dir(dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| store_err(&dir, e))?;
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| store_err(&dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        let store = Self {
            append_to: Some(dir.join(RECORD_FILE_NAME)),
            ..Self::default()
        };
        for file in files {
            store.load_file(&file)?;
        }
        Ok(store)
    }

    /// Merges the records of one JSONL file into the store.
    pub fn load_file(&self, path: &Path) -> Result<usize, GatewayError> {
        let file = fs::File::open(path).map_err(|e| store_err(path, e))?;
        let mut count = 0;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| store_err(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ReplayRecord = serde_json::from_str(&line).map_err(|e| GatewayError::Store {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", i + 1),
            })?;
            self.insert(rec.fingerprint, rec.content)?;
            count += 1;
        }
        Ok(count)
    }

    fn insert(&self, fingerprint: String, content: String) -> Result<bool, GatewayError> {
        let mut map = self.entries.write().expect("replay store lock poisoned");
        match map.get(&fingerprint) {
            Some(existing) if *existing == content => Ok(false),
            Some(_) => Err(GatewayError::Drift { fingerprint }),
            None => {
                map.insert(fingerprint, content);
                Ok(true)
            }
        }
    }

    pub fn get(&self, fingerprint: &str) -> Option<String> {
        self.entries
            .read()
            .expect("replay store lock poisoned")
            .get(fingerprint)
            .cloned()
    }

    pub fn contains(&self, fingerprint: &str) -> bool {
        self.entries
            .read()
            .expect("replay store lock poisoned")
            .contains_key(fingerprint)
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("replay store lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Adds a recording. Re-recording identical content is a no-op; different
    /// content under a known fingerprint is a drift error.
    pub fn record(&self, fingerprint: &str, content: &str) -> Result<(), GatewayError> {
        let _guard = self.append_lock.lock().expect("replay store lock poisoned");
        if !self.insert(fingerprint.to_string(), content.to_string())? {
            return Ok(());
        }
        if let Some(path) = &self.append_to {
            let line = serde_json::to_string(&ReplayRecord {
                fingerprint: fingerprint.to_string(),
                content: content.to_string(),
            })
            .expect("record serializes");
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| store_err(path, e))?;
            writeln!(file, "{line}").map_err(|e| store_err(path, e))?;
        }
        Ok(())
    }

    /// All records sorted by fingerprint.
    pub fn records(&self) -> Vec<ReplayRecord> {
        let map = self.entries.read().expect("replay store lock poisoned");
        let mut out: Vec<ReplayRecord> = map
            .iter()
            .map(|(f, c)| ReplayRecord {
                fingerprint: f.clone(),
                content: c.clone(),
            })
            .collect();
        out.sort_by(|a, b| a.fingerprint.cmp(&b.fingerprint));
        out
    }
}

fn store_err(path: &Path, e: std::io::Error) -> GatewayError {
    GatewayError::Store {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}
