//! Pluggable external-service clients — teacher LLM, embedding provider,
//! reward provider — plus a record/replay cache that makes every pipeline
//! run deterministic and offline-testable.
//!
//! Backends are trait objects shared across workers. Results are always
//! keyed by item id, never by arrival order.

mod cache;
mod embedding;
mod reward;
mod tagged;
mod teacher;

pub use cache::{CacheMode, CacheStats, CachedTeacher};
pub use embedding::{cosine, embed, EmbeddingBackend, HashedEmbedding, ScriptedEmbedding};
pub use reward::{
    fetch_step_rewards, PassThroughRewards, RemoteRewards, RewardBackend, ScriptedRewards,
};
pub use tagged::{parse_tagged, TagError, TaggedOutput};
pub use teacher::{
    complete, RemoteTeacher, ScriptRule, ScriptedTeacher, TeacherBackend, UnreachableTeacher,
};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("replay cache miss for digest {digest}")]
    CacheMiss { digest: String },
    #[error("no scripted response matches prompt: {preview:?}")]
    NoScript { preview: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cannot normalize zero-length embedding vector")]
    ZeroVector,
    #[error("reward backend returned {got} scores for {expected} steps")]
    RewardLengthMismatch { expected: usize, got: usize },
    #[error("reward score {0} outside [0,1]")]
    RewardOutOfRange(f64),
    #[error("trace has no embedded step rewards and no remote backend is configured")]
    MissingRewards,
    #[error("cache io at {path}: {source}")]
    CacheIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("tag parse failure: {0}")]
    Tag(#[from] TagError),
    #[error("malformed remote response: {0}")]
    MalformedResponse(String),
}

/// What a teacher call is for. Recorded in cache keys via the prompt; used
/// by callers to pick decoding parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Annotate,
    Diagnose,
    Propose,
    Solve,
}

/// One teacher-LLM query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherRequest {
    pub prompt: String,
    pub temperature: f64,
    pub n_samples: u32,
    pub max_tokens: u32,
    pub purpose: Purpose,
}

impl TeacherRequest {
    pub fn new(prompt: impl Into<String>, purpose: Purpose) -> Self {
        TeacherRequest {
            prompt: prompt.into(),
            temperature: 0.7,
            n_samples: 1,
            max_tokens: 2048,
            purpose,
        }
    }

    pub fn with_samples(mut self, n: u32) -> Self {
        self.n_samples = n;
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.prompt.is_empty() {
            return Err(BackendError::InvalidRequest("empty prompt".into()));
        }
        if self.n_samples < 1 {
            return Err(BackendError::InvalidRequest("n_samples must be >= 1".into()));
        }
        if self.temperature < 0.0 {
            return Err(BackendError::InvalidRequest(
                "temperature must be >= 0".into(),
            ));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

/// Content-addressed key for one sampled completion.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn new(backend_id: &str, request: &TeacherRequest, sample_index: u32) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(backend_id.as_bytes());
        hasher.update([0u8]);
        hasher.update(request.prompt.as_bytes());
        hasher.update([0u8]);
        hasher.update(request.temperature.to_bits().to_le_bytes());
        hasher.update(request.n_samples.to_le_bytes());
        hasher.update(sample_index.to_le_bytes());
        let digest = hasher.finalize();
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        CacheKey(hex)
    }

    pub fn digest(&self) -> &str {
        &self.0
    }
}

/// Teacher handle: transport plus the retry/concurrency policy every
/// teacher-driven operation shares.
#[derive(Clone)]
pub struct Teacher {
    backend: Arc<dyn TeacherBackend>,
    /// Upper bound on concurrent in-flight teacher calls.
    pub max_in_flight: usize,
    /// Re-prompts allowed after a tag-parse failure before an item is skipped.
    pub parse_retries: u32,
}

impl Teacher {
    pub fn new(backend: Arc<dyn TeacherBackend>) -> Self {
        Teacher {
            backend,
            max_in_flight: 4,
            parse_retries: 2,
        }
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    pub fn backend(&self) -> &dyn TeacherBackend {
        self.backend.as_ref()
    }

    pub fn complete(&self, request: &TeacherRequest) -> Result<Vec<String>, BackendError> {
        complete(request, self.backend.as_ref())
    }

    /// One completion at an explicit sample index; retries consume fresh
    /// indices so each attempt is individually cached and replayable.
    pub fn complete_sample(
        &self,
        request: &TeacherRequest,
        sample_index: u32,
    ) -> Result<String, BackendError> {
        request.validate()?;
        self.backend.complete_sample(request, sample_index)
    }
}

/// Run `f` over `items` with at most `max_in_flight` worker threads.
/// Results come back in input order regardless of completion order.
pub(crate) fn fan_out<T, R, F>(items: &[T], max_in_flight: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = max_in_flight.max(1).min(items.len().max(1));
    if workers <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let (tx, rx) = std::sync::mpsc::channel::<(usize, R)>();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            let f = &f;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                if tx.send((i, f(&items[i]))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
    });
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    for (i, result) in rx {
        slots[i] = Some(result);
    }
    slots.into_iter().map(|r| r.expect("worker filled slot")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cache_key_is_stable_and_sensitive() {
        let req = TeacherRequest::new("prompt", Purpose::Annotate);
        let a = CacheKey::new("b1", &req, 0);
        let b = CacheKey::new("b1", &req, 0);
        assert_eq!(a, b);
        assert_ne!(a, CacheKey::new("b2", &req, 0));
        assert_ne!(a, CacheKey::new("b1", &req, 1));
        let mut warm = req.clone();
        warm.temperature = 1.0;
        assert_ne!(a, CacheKey::new("b1", &warm, 0));
    }

    #[test]
    fn request_validation() {
        assert!(TeacherRequest::new("", Purpose::Solve).validate().is_err());
        let mut req = TeacherRequest::new("p", Purpose::Solve);
        req.n_samples = 0;
        assert!(req.validate().is_err());
    }

    #[test]
    fn fan_out_preserves_order() {
        let items: Vec<u64> = (0..100).collect();
        let out = fan_out(&items, 8, |&x| x * 2);
        assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
    }
}
