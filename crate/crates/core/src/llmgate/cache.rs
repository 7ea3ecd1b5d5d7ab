use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{GateError, Provenance};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub request_key: String,
    pub model: String,
    pub samples: Vec<String>,
    pub provenance: Provenance,
    pub created_at_ms: u64,
}

/// Append-only JSON Lines store keyed by request key. The first entry for a
/// key wins; corrupt lines are skipped on load.
pub struct ResponseCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, CacheEntry>>,
    writer: Mutex<Option<File>>,
    skipped: usize,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        ResponseCache {
            path: None,
            entries: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
            skipped: 0,
        }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, GateError> {
        let path = path.as_ref().to_path_buf();
        let io = |e: std::io::Error| GateError::Io(format!("{}: {e}", path.display()));
        let mut entries = HashMap::new();
        let mut skipped = 0;
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(io)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheEntry>(&line) {
                    Ok(e) => {
                        entries.entry(e.request_key.clone()).or_insert(e);
                    }
                    Err(err) => {
                        skipped += 1;
                        log::warn!("{}:{}: skipping corrupt cache line ({err})", path.display(), i + 1);
                    }
                }
            }
        } else if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        // a torn final line from a crash would otherwise glue onto the next record
        if std::fs::metadata(&path).map(|m| m.len() > 0).unwrap_or(false) && !ends_with_newline(&path) {
            file.write_all(b"\n").map_err(io)?;
        }
        Ok(ResponseCache {
            path: Some(path),
            entries: RwLock::new(entries),
            writer: Mutex::new(Some(file)),
            skipped,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Corrupt lines ignored when the cache was opened.
    pub fn skipped_lines(&self) -> usize {
        self.skipped
    }

    pub fn get(&self, key: &str) -> Option<CacheEntry> {
        self.entries.read().unwrap().get(key).cloned()
    }

    /// Persists then publishes an entry. Existing keys are left untouched.
    pub fn put(&self, entry: CacheEntry) -> Result<(), GateError> {
        let mut writer = self.writer.lock().unwrap();
        if self.entries.read().unwrap().contains_key(&entry.request_key) {
            return Ok(());
        }
        if let Some(file) = writer.as_mut() {
            let mut line = serde_json::to_string(&entry).map_err(|e| GateError::Io(e.to_string()))?;
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| GateError::Io(e.to_string()))?;
        }
        self.entries
            .write()
            .unwrap()
            .insert(entry.request_key.clone(), entry);
        Ok(())
    }
}

fn ends_with_newline(path: &Path) -> bool {
    use std::io::{Read, Seek, SeekFrom};
    let Ok(mut f) = File::open(path) else { return true };
    if f.seek(SeekFrom::End(-1)).is_err() {
        return true;
    }
    let mut b = [0u8; 1];
    f.read_exact(&mut b).is_ok() && b[0] == b'\n'
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(key: &str, s: &str) -> CacheEntry {
        CacheEntry {
            request_key: key.into(),
            model: "m".into(),
            samples: vec![s.into()],
            provenance: Provenance::Live,
            created_at_ms: 1,
        }
    }

    #[test]
    fn persists_across_reopen_and_skips_corrupt_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/cache.jsonl");
        {
            let c = ResponseCache::open(&path).unwrap();
            c.put(entry("k1", "a")).unwrap();
            c.put(entry("k1", "ignored")).unwrap();
            c.put(entry("k2", "b")).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{not json\n{\"request_key\":\"k3\",\"mod").unwrap();
        drop(f);

        let c = ResponseCache::open(&path).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.skipped_lines(), 2);
        assert_eq!(c.get("k1").unwrap().samples, ["a"]);
        c.put(entry("k3", "c")).unwrap();
        drop(c);
        let c = ResponseCache::open(&path).unwrap();
        assert_eq!(c.get("k3").unwrap().samples, ["c"]);
    }
}
