//! Record/replay cache for teacher completions, content-addressed by
//! [`CacheKey`] digest. Writes are serialized; reads are concurrent.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{BackendError, CacheKey, TeacherBackend, TeacherRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CacheMode {
    /// Always call the inner backend and persist the result.
    Record,
    /// Serve hits from disk; on a miss, call the inner backend and persist.
    Replay,
    /// Serve hits from disk; a miss is an error naming the digest.
    StrictReplay,
    /// Bypass the cache entirely.
    Live,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub hits: usize,
    pub misses: usize,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    response: String,
}

/// Caching wrapper around any teacher backend.
pub struct CachedTeacher {
    inner: Arc<dyn TeacherBackend>,
    dir: PathBuf,
    mode: CacheMode,
    hits: AtomicUsize,
    misses: AtomicUsize,
    write_lock: Mutex<()>,
    id: String,
}

impl CachedTeacher {
    pub fn new(inner: Arc<dyn TeacherBackend>, dir: impl Into<PathBuf>, mode: CacheMode) -> Self {
        let id = inner.id().to_string();
        CachedTeacher {
            inner,
            dir: dir.into(),
            mode,
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
            write_lock: Mutex::new(()),
            id,
        }
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }

    fn entry_path(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(format!("{}.json", key.digest()))
    }

    fn read_entry(&self, key: &CacheKey) -> Result<Option<String>, BackendError> {
        let path = self.entry_path(key);
        match std::fs::read_to_string(&path) {
            Ok(text) => {
                let entry: CacheEntry = serde_json::from_str(&text).map_err(|e| {
                    BackendError::MalformedResponse(format!(
                        "cache entry {}: {e}",
                        path.display()
                    ))
                })?;
                Ok(Some(entry.response))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(BackendError::CacheIo {
                path: path.display().to_string(),
                source,
            }),
        }
    }

    fn write_entry(&self, key: &CacheKey, response: &str) -> Result<(), BackendError> {
        let _guard = self.write_lock.lock().unwrap();
        std::fs::create_dir_all(&self.dir).map_err(|source| BackendError::CacheIo {
            path: self.dir.display().to_string(),
            source,
        })?;
        let path = self.entry_path(key);
        let body = serde_json::to_string(&CacheEntry {
            response: response.to_string(),
        })
        .expect("cache entry serialization cannot fail");
        std::fs::write(&path, body).map_err(|source| BackendError::CacheIo {
            path: path.display().to_string(),
            source,
        })
    }

    fn fetch_and_store(
        &self,
        request: &TeacherRequest,
        sample_index: u32,
        key: &CacheKey,
    ) -> Result<String, BackendError> {
        let response = self.inner.complete_sample(request, sample_index)?;
        self.write_entry(key, &response)?;
        Ok(response)
    }
}

impl TeacherBackend for CachedTeacher {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete_sample(
        &self,
        request: &TeacherRequest,
        sample_index: u32,
    ) -> Result<String, BackendError> {
        if self.mode == CacheMode::Live {
            return self.inner.complete_sample(request, sample_index);
        }
        let key = CacheKey::new(&self.id, request, sample_index);
        match self.mode {
            CacheMode::Record => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                self.fetch_and_store(request, sample_index, &key)
            }
            CacheMode::Replay => match self.read_entry(&key)? {
                Some(response) => {
                    self.hits.fetch_add(1, Ordering::Relaxed);
                    Ok(response)
                }
                None => {
                    self.misses.fetch_add(1, Ordering::Relaxed);
                    self.fetch_and_store(request, sample_index, &key)
                }
            },
            CacheMode::StrictReplay => match self.read_entry(&key)? {
                Some(response) => {
                    self.hits.fetch_add(1, Ordering::Relaxed);
                    Ok(response)
                }
                None => {
                    self.misses.fetch_add(1, Ordering::Relaxed);
                    Err(BackendError::CacheMiss {
                        digest: key.digest().to_string(),
                    })
                }
            },
            CacheMode::Live => unreachable!(),
        }
    }

    fn calls(&self) -> usize {
        self.inner.calls()
    }
}
