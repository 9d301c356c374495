use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{Metadata, ProviderKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    /// `None` records a definitive miss (e.g. deleted video).
    pub result: Option<Metadata>,
    pub fetched_at: DateTime<Utc>,
}

#[derive(Serialize, Deserialize)]
struct PersistedEntry {
    kind: ProviderKind,
    key: String,
    #[serde(flatten)]
    entry: CacheEntry,
}

/// Lookup cache keyed by `(provider kind, lookup key)`. Entries never expire
/// on their own; [`EnrichmentCache::flush`] clears them.
#[derive(Default)]
pub struct EnrichmentCache {
    entries: RwLock<HashMap<(ProviderKind, String), CacheEntry>>,
    path: Option<PathBuf>,
}

impl EnrichmentCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens a cache persisted as JSON at `path`; a missing file starts empty.
    pub fn open(path: impl Into<PathBuf>) -> std::io::Result<Self> {
        let path = path.into();
        let entries = match std::fs::read(&path) {
            Ok(bytes) => {
                let list: Vec<PersistedEntry> = serde_json::from_slice(&bytes)
                    .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
                list.into_iter().map(|p| ((p.kind, p.key), p.entry)).collect()
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => HashMap::new(),
            Err(e) => return Err(e),
        };
        Ok(EnrichmentCache { entries: RwLock::new(entries), path: Some(path) })
    }

    pub fn get(&self, kind: ProviderKind, key: &str) -> Option<CacheEntry> {
        self.entries.read().unwrap().get(&(kind, key.to_string())).cloned()
    }

    pub fn insert(&self, kind: ProviderKind, key: &str, result: Option<Metadata>) {
        let entry = CacheEntry { result, fetched_at: Utc::now() };
        self.entries.write().unwrap().insert((kind, key.to_string()), entry);
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flush(&self) {
        self.entries.write().unwrap().clear();
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Writes the cache to its backing file, if any. Entries are sorted so
    /// the file is stable across runs.
    pub fn save(&self) -> std::io::Result<()> {
        let Some(path) = &self.path else { return Ok(()) };
        let mut list: Vec<PersistedEntry> = self
            .entries
            .read()
            .unwrap()
            .iter()
            .map(|((kind, key), entry)| PersistedEntry { kind: *kind, key: key.clone(), entry: entry.clone() })
            .collect();
        list.sort_by(|a, b| (a.kind, &a.key).cmp(&(b.kind, &b.key)));
        let bytes = serde_json::to_vec_pretty(&list).map_err(std::io::Error::other)?;
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(tmp, path)
    }
}
