//! Persistent LRU block cache in the directory-store layout.
//!
//! Entries survive process restarts; the index is rebuilt from the files on
//! open, oldest modification first. Cached envelopes are checksummed on every
//! hit and a bad entry is dropped and refetched.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::Serialize;

use super::{FabricError, Result};
use crate::codec::verify_envelope;
use crate::store::{BlockKey, BlockStore, DirStore};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub entries: u64,
    pub resident_bytes: u64,
    pub capacity_bytes: u64,
}

#[derive(Debug, Default)]
struct Index {
    entries: HashMap<BlockKey, (u64, u64)>,
    by_age: BTreeMap<u64, BlockKey>,
    tick: u64,
    resident: u64,
    hits: u64,
    misses: u64,
}

impl Index {
    fn touch(&mut self, key: &BlockKey) {
        if let Some((_, tick)) = self.entries.get_mut(key) {
            self.by_age.remove(tick);
            self.tick += 1;
            *tick = self.tick;
            self.by_age.insert(self.tick, key.clone());
        }
    }

    fn insert(&mut self, key: BlockKey, size: u64) {
        self.remove(&key);
        self.tick += 1;
        self.entries.insert(key.clone(), (size, self.tick));
        self.by_age.insert(self.tick, key);
        self.resident += size;
    }

    fn remove(&mut self, key: &BlockKey) -> bool {
        match self.entries.remove(key) {
            Some((size, tick)) => {
                self.by_age.remove(&tick);
                self.resident -= size;
                true
            }
            None => false,
        }
    }

    fn oldest(&self) -> Option<BlockKey> {
        self.by_age.values().next().cloned()
    }
}

#[derive(Debug)]
pub struct BlockCache {
    dataset: String,
    files: DirStore,
    capacity: u64,
    index: Mutex<Index>,
}

impl BlockCache {
    /// Opens the cache for `dataset` under `dir/{dataset}`.
    pub fn open(dir: &Path, dataset: &str, capacity_bytes: u64) -> Result<Self> {
        let root = dir.join(dataset);
        let files = DirStore::create(&root).map_err(|e| FabricError::Cache(e.to_string()))?;
        let cache =
            Self { dataset: dataset.into(), files, capacity: capacity_bytes, index: Mutex::new(Index::default()) };
        cache.scan().map_err(|e| FabricError::Cache(format!("{}: {e}", root.display())))?;
        Ok(cache)
    }

    pub fn root(&self) -> &Path {
        self.files.root()
    }

    fn scan(&self) -> std::io::Result<()> {
        let mut found: Vec<(std::time::SystemTime, BlockKey, u64)> = Vec::new();
        for field in subdirs(self.root())? {
            for tdir in subdirs(&field)? {
                let Some(t) = name_of(&tdir).strip_prefix('t').and_then(|s| s.parse::<u32>().ok()) else {
                    continue;
                };
                for rdir in subdirs(&tdir)? {
                    for entry in fs::read_dir(&rdir)? {
                        let entry = entry?;
                        let Some(b) = entry.file_name().to_str().and_then(crate::store::parse_block_name) else {
                            continue;
                        };
                        let meta = entry.metadata()?;
                        let key = BlockKey::new(&self.dataset, name_of(&field), t, name_of(&rdir), b);
                        found.push((meta.modified()?, key, meta.len()));
                    }
                }
            }
        }
        found.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        let mut index = self.index.lock().unwrap();
        for (_, key, size) in found {
            index.insert(key, size);
        }
        self.evict(&mut index, 0);
        Ok(())
    }

    fn evict(&self, index: &mut Index, incoming: u64) {
        while index.resident + incoming > self.capacity {
            let Some(key) = index.oldest() else { break };
            index.remove(&key);
            let _ = self.files.remove_block(&key);
        }
    }

    /// Returns the envelope for `key`, from disk when resident, otherwise via
    /// `fetch`. The flag is true on a hit. Fetched envelopes with a bad
    /// checksum are returned as errors and never inserted.
    pub fn get_or_fetch(&self, key: &BlockKey, fetch: impl FnOnce() -> Result<Vec<u8>>) -> Result<(Vec<u8>, bool)> {
        let key = BlockKey { dataset: self.dataset.clone(), ..key.clone() };
        let resident = self.index.lock().unwrap().entries.contains_key(&key);
        if resident {
            match self.files.get_block(&key) {
                Ok(bytes) if verify_envelope(&bytes).is_ok() => {
                    let mut index = self.index.lock().unwrap();
                    index.hits += 1;
                    index.touch(&key);
                    return Ok((bytes, true));
                }
                _ => {
                    self.index.lock().unwrap().remove(&key);
                    let _ = self.files.remove_block(&key);
                }
            }
        }
        self.index.lock().unwrap().misses += 1;
        let bytes = fetch()?;
        verify_envelope(&bytes)
            .map_err(|e| FabricError::CorruptBlock { key: key.to_string(), reason: e.to_string() })?;
        let size = bytes.len() as u64;
        if size <= self.capacity {
            let mut index = self.index.lock().unwrap();
            index.remove(&key);
            self.evict(&mut index, size);
            if self.files.put_block(&key, &bytes).is_ok() {
                index.insert(key, size);
            }
        }
        Ok((bytes, false))
    }

    pub fn contains(&self, key: &BlockKey) -> bool {
        let key = BlockKey { dataset: self.dataset.clone(), ..key.clone() };
        self.index.lock().unwrap().entries.contains_key(&key)
    }

    /// Path of the cached file for `key`.
    pub fn path_of(&self, key: &BlockKey) -> PathBuf {
        self.files.block_path(key)
    }

    /// Drops every entry and its file; counters are kept.
    pub fn clear(&self) {
        let mut index = self.index.lock().unwrap();
        let keys: Vec<BlockKey> = index.entries.keys().cloned().collect();
        for key in keys {
            index.remove(&key);
            let _ = self.files.remove_block(&key);
        }
    }

    pub fn stats(&self) -> CacheStats {
        let index = self.index.lock().unwrap();
        CacheStats {
            hits: index.hits,
            misses: index.misses,
            entries: index.entries.len() as u64,
            resident_bytes: index.resident,
            capacity_bytes: self.capacity,
        }
    }
}

fn subdirs(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            out.push(entry.path());
        }
    }
    Ok(out)
}

fn name_of(path: &Path) -> &str {
    path.file_name().and_then(|n| n.to_str()).unwrap_or_default()
}
