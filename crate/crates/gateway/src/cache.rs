//! Append-only response cache, one JSON entry per line.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{Mutex as AsyncMutex, OwnedMutexGuard};

use crate::CompletionRecord;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("cache {path} is corrupt at line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

#[derive(Serialize, Deserialize)]
struct Entry {
    key: String,
    record: CompletionRecord,
}

pub struct ResponseCache {
    path: PathBuf,
    entries: Mutex<HashMap<String, CompletionRecord>>,
    key_locks: Mutex<HashMap<String, Arc<AsyncMutex<()>>>>,
    file: Mutex<File>,
}

impl ResponseCache {
    /// Opens or creates the cache file (and its directory). Any unreadable
    /// line is an error.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, CacheError> {
        let path = path.into();
        let io_err = |source| CacheError::Io {
            path: path.clone(),
            source,
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(io_err)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(io_err)?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: Entry = serde_json::from_str(&line).map_err(|e| CacheError::Corrupt {
                    path: path.clone(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                if let Some(previous) = entries.get(&entry.key) {
                    if previous != &entry.record {
                        return Err(CacheError::Corrupt {
                            path: path.clone(),
                            line: i + 1,
                            message: format!("conflicting entries for key {}", entry.key),
                        });
                    }
                }
                entries.insert(entry.key, entry.record);
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err)?;
        // a complete final entry may lack its newline; terminate it so the
        // next append starts on a fresh line
        if !ends_with_newline(&path).map_err(io_err)? {
            file.write_all(b"\n").map_err(io_err)?;
        }
        Ok(ResponseCache {
            path,
            entries: Mutex::new(entries),
            key_locks: Mutex::new(HashMap::new()),
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<CompletionRecord> {
        self.entries.lock().expect("cache lock").get(key).cloned()
    }

    /// Serializes work on one key; other keys proceed in parallel.
    pub async fn lock_key(&self, key: &str) -> OwnedMutexGuard<()> {
        let lock = self
            .key_locks
            .lock()
            .expect("cache lock")
            .entry(key.to_string())
            .or_default()
            .clone();
        lock.lock_owned().await
    }

    /// Appends an entry and makes it visible to readers.
    pub fn insert(&self, key: &str, record: &CompletionRecord) -> Result<(), CacheError> {
        let mut line = serde_json::to_string(&Entry {
            key: key.to_string(),
            record: record.clone(),
        })
        .expect("cache entry serializes");
        line.push('\n');
        {
            let mut file = self.file.lock().expect("cache lock");
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|source| CacheError::Io {
                    path: self.path.clone(),
                    source,
                })?;
        }
        self.entries
            .lock()
            .expect("cache lock")
            .insert(key.to_string(), record.clone());
        Ok(())
    }
}

fn ends_with_newline(path: &Path) -> io::Result<bool> {
    use std::io::{Read, Seek, SeekFrom};
    let mut f = File::open(path)?;
    let len = f.metadata()?.len();
    if len == 0 {
        return Ok(true);
    }
    f.seek(SeekFrom::Start(len - 1))?;
    let mut last = [0u8; 1];
    f.read_exact(&mut last)?;
    Ok(last[0] == b'\n')
}
