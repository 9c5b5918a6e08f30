//! Shared in-memory store for intermediate and final row batches.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::SystemTime;

use crate::broker::CacheLocation;
use crate::error::{Error, Result};
use crate::storage::write_csv;
use crate::types::RowBatch;

pub const DEFAULT_CAPACITY: u64 = 512 * 1024 * 1024;

/// Parsed `<query_id>.<stage>.<task>[.<bucket>]`, where `<stage>` is
/// `stage<n>` or `final`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheKey {
    pub query_id: String,
    pub stage: String,
    pub task: String,
    pub bucket: Option<u32>,
}

impl CacheKey {
    pub fn parse(key: &str) -> Result<CacheKey> {
        let bad = || Error::MalformedCacheKey(key.to_string());
        let parts: Vec<&str> = key.split('.').collect();
        let (q, s, t, b) = match parts.as_slice() {
            [q, s, t] => (q, s, t, None),
            [q, s, t, b] => (q, s, t, Some(b.parse::<u32>().map_err(|_| bad())?)),
            _ => return Err(bad()),
        };
        let stage_ok = *s == "final"
            || s.strip_prefix("stage")
                .is_some_and(|n| !n.is_empty() && n.bytes().all(|c| c.is_ascii_digit()));
        if q.is_empty() || t.is_empty() || !stage_ok {
            return Err(bad());
        }
        Ok(CacheKey {
            query_id: q.to_string(),
            stage: s.to_string(),
            task: t.to_string(),
            bucket: b,
        })
    }
}

#[derive(Debug)]
pub struct CacheEntry {
    pub batch: Arc<RowBatch>,
    pub bytes: u64,
    pub created_at: SystemTime,
    reads: AtomicU64,
}

#[derive(Default)]
struct Inner {
    entries: HashMap<String, CacheEntry>,
    total: u64,
}

pub struct Cache {
    inner: RwLock<Inner>,
    limit: u64,
}

impl Default for Cache {
    fn default() -> Self {
        Cache::new(DEFAULT_CAPACITY)
    }
}

impl Cache {
    pub fn new(limit_bytes: u64) -> Self {
        Cache {
            inner: RwLock::new(Inner::default()),
            limit: limit_bytes,
        }
    }

    pub fn put(&self, key: &str, batch: RowBatch) -> Result<CacheLocation> {
        CacheKey::parse(key)?;
        let bytes = batch.byte_size();
        let mut inner = self.inner.write().expect("cache lock poisoned");
        if inner.entries.contains_key(key) {
            return Err(Error::DuplicateKey(key.to_string()));
        }
        if inner.total + bytes > self.limit {
            return Err(Error::CapacityExceeded {
                requested: bytes,
                used: inner.total,
                limit: self.limit,
            });
        }
        inner.total += bytes;
        inner.entries.insert(
            key.to_string(),
            CacheEntry {
                batch: Arc::new(batch),
                bytes,
                created_at: SystemTime::now(),
                reads: AtomicU64::new(0),
            },
        );
        Ok(CacheLocation(format!("mem://{key}")))
    }

    pub fn get(&self, key: &str) -> Result<Arc<RowBatch>> {
        let inner = self.inner.read().expect("cache lock poisoned");
        let e = inner
            .entries
            .get(key)
            .ok_or_else(|| Error::MissingKey(key.to_string()))?;
        e.reads.fetch_add(1, Ordering::Relaxed);
        Ok(e.batch.clone())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.inner
            .read()
            .expect("cache lock poisoned")
            .entries
            .contains_key(key)
    }

    pub fn total_bytes(&self) -> u64 {
        self.inner.read().expect("cache lock poisoned").total
    }

    pub fn len(&self) -> usize {
        self.inner
            .read()
            .expect("cache lock poisoned")
            .entries
            .len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn matching<'a>(
        inner: &'a Inner,
        query_id: &str,
    ) -> impl Iterator<Item = (&'a String, &'a CacheEntry)> {
        let prefix = format!("{query_id}.");
        inner
            .entries
            .iter()
            .filter(move |(k, _)| k.starts_with(&prefix))
    }

    /// Keys belonging to `query_id`, sorted.
    pub fn keys_for(&self, query_id: &str) -> Vec<String> {
        let inner = self.inner.read().expect("cache lock poisoned");
        let mut keys: Vec<String> = Self::matching(&inner, query_id)
            .map(|(k, _)| k.clone())
            .collect();
        keys.sort();
        keys
    }

    /// Per-key read counts for one query.
    pub fn read_counts(&self, query_id: &str) -> BTreeMap<String, u64> {
        let inner = self.inner.read().expect("cache lock poisoned");
        Self::matching(&inner, query_id)
            .map(|(k, e)| (k.clone(), e.reads.load(Ordering::Relaxed)))
            .collect()
    }

    /// Removes every entry of `query_id` for which `keep` is false.
    pub fn drop_where(&self, query_id: &str, keep: impl Fn(&str) -> bool) -> usize {
        let prefix = format!("{query_id}.");
        let mut inner = self.inner.write().expect("cache lock poisoned");
        let doomed: Vec<String> = inner
            .entries
            .keys()
            .filter(|k| k.starts_with(&prefix) && !keep(k))
            .cloned()
            .collect();
        for k in &doomed {
            if let Some(e) = inner.entries.remove(k) {
                inner.total -= e.bytes;
            }
        }
        doomed.len()
    }

    pub fn drop_query(&self, query_id: &str) -> usize {
        self.drop_where(query_id, |_| false)
    }

    /// Writes every entry as `<dir>/<key>.csv`.
    pub fn dump(&self, dir: &Path) -> Result<usize> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let inner = self.inner.read().expect("cache lock poisoned");
        for (k, e) in &inner.entries {
            let path = dir.join(format!("{k}.csv"));
            let mut buf = Vec::new();
            write_csv(&e.batch, &mut buf).map_err(|err| Error::io(&path, err))?;
            fs::write(&path, buf).map_err(|err| Error::io(&path, err))?;
        }
        Ok(inner.entries.len())
    }
}
