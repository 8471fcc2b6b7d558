//! Content-addressed response cache, one JSON file per entry under a
//! two-level hex directory (`ab/cd/abcd...json`).

use std::fmt;
use std::fs;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 256-bit content hash in lowercase hex.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn from_hex(hex: &str) -> Result<Self> {
        let ok = hex.len() == 64 && hex.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'));
        if !ok {
            return Err(Error::BadCacheKey(hex.to_string()));
        }
        Ok(CacheKey(hex.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: CacheKey,
    pub response: String,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    pub backend_id: String,
}

impl CacheEntry {
    pub fn new(key: CacheKey, response: impl Into<String>, backend_id: impl Into<String>) -> Self {
        let created_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        CacheEntry {
            key,
            response: response.into(),
            created_at,
            backend_id: backend_id.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub entries: u64,
    pub bytes: u64,
}

#[derive(Debug)]
pub struct ResponseCache {
    root: PathBuf,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl ResponseCache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(ResponseCache {
            root,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn entry_path(&self, key: &CacheKey) -> PathBuf {
        let k = key.as_str();
        self.root
            .join(&k[..2])
            .join(&k[2..4])
            .join(format!("{k}.json"))
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<CacheEntry>> {
        let path = self.entry_path(key);
        match fs::read(&path) {
            Ok(bytes) => {
                let entry: CacheEntry = serde_json::from_slice(&bytes)?;
                self.hits.fetch_add(1, Ordering::Relaxed);
                Ok(Some(entry))
            }
            Err(e) if e.kind() == ErrorKind::NotFound => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                Ok(None)
            }
            Err(e) => Err(Error::io(path, e)),
        }
    }

    /// Writes `entry` atomically. Re-putting the same response is a no-op;
    /// a different response under an existing key is a conflict.
    pub fn put(&self, entry: &CacheEntry) -> Result<()> {
        let path = self.entry_path(&entry.key);
        let dir = path.parent().expect("entry path has a parent");
        if let Some(existing) = self.peek(&path)? {
            return check_same(&existing, entry);
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        tmp.write_all(&serde_json::to_vec(entry)?)
            .map_err(|e| Error::io(tmp.path(), e))?;
        match tmp.persist_noclobber(&path) {
            Ok(_) => Ok(()),
            Err(e) if e.error.kind() == ErrorKind::AlreadyExists => match self.peek(&path)? {
                Some(existing) => check_same(&existing, entry),
                None => Err(Error::io(&path, e.error)),
            },
            Err(e) => Err(Error::io(&path, e.error)),
        }
    }

    fn peek(&self, path: &Path) -> Result<Option<CacheEntry>> {
        match fs::read(path) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn stats(&self) -> Result<CacheStats> {
        let mut stats = CacheStats::default();
        for path in self.entry_files()? {
            stats.entries += 1;
            stats.bytes += fs::metadata(&path).map_err(|e| Error::io(&path, e))?.len();
        }
        Ok(stats)
    }

    /// Removes every entry; returns how many were deleted.
    pub fn clear(&self) -> Result<u64> {
        let files = self.entry_files()?;
        for path in &files {
            fs::remove_file(path).map_err(|e| Error::io(path, e))?;
        }
        for level1 in read_dirs(&self.root)? {
            for level2 in read_dirs(&level1)? {
                let _ = fs::remove_dir(&level2);
            }
            let _ = fs::remove_dir(&level1);
        }
        Ok(files.len() as u64)
    }

    fn entry_files(&self) -> Result<Vec<PathBuf>> {
        let mut files = Vec::new();
        for level1 in read_dirs(&self.root)? {
            for level2 in read_dirs(&level1)? {
                let rd = fs::read_dir(&level2).map_err(|e| Error::io(&level2, e))?;
                for item in rd {
                    let path = item.map_err(|e| Error::io(&level2, e))?.path();
                    if path.extension().is_some_and(|ext| ext == "json") {
                        files.push(path);
                    }
                }
            }
        }
        files.sort();
        Ok(files)
    }
}

fn read_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for item in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = item.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            dirs.push(path);
        }
    }
    Ok(dirs)
}

fn check_same(existing: &CacheEntry, entry: &CacheEntry) -> Result<()> {
    if existing.response == entry.response {
        Ok(())
    } else {
        Err(Error::CacheConflict {
            key: entry.key.to_string(),
        })
    }
}
