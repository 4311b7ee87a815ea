//! Embedding providers. The pipeline only ever consumes unit-norm vectors;
//! normalization happens here, not in callers.

use std::collections::HashMap;

use sha2::{Digest, Sha256};

use super::BackendError;

pub trait EmbeddingBackend: Send + Sync {
    fn id(&self) -> &str;

    /// Raw (not necessarily normalized) vectors, one per text.
    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError>;
}

/// Embed a batch and L2-normalize every vector. All vectors in a batch must
/// share one dimension.
pub fn embed(
    texts: &[String],
    backend: &dyn EmbeddingBackend,
) -> Result<Vec<Vec<f64>>, BackendError> {
    if texts.is_empty() {
        return Err(BackendError::InvalidRequest("empty text batch".into()));
    }
    let raw = backend.embed_raw(texts)?;
    if raw.len() != texts.len() {
        return Err(BackendError::MalformedResponse(format!(
            "{} vectors for {} texts",
            raw.len(),
            texts.len()
        )));
    }
    let dim = raw.first().map(|v| v.len()).unwrap_or(0);
    let mut out = Vec::with_capacity(raw.len());
    for v in raw {
        if v.len() != dim {
            return Err(BackendError::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(BackendError::ZeroVector);
        }
        out.push(v.iter().map(|x| x / norm).collect());
    }
    Ok(out)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fixed text → vector table for tests and offline fixtures.
pub struct ScriptedEmbedding {
    id: String,
    table: HashMap<String, Vec<f64>>,
}

impl ScriptedEmbedding {
    pub fn new(id: impl Into<String>, table: HashMap<String, Vec<f64>>) -> Self {
        ScriptedEmbedding {
            id: id.into(),
            table,
        }
    }
}

impl EmbeddingBackend for ScriptedEmbedding {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        texts
            .iter()
            .map(|t| {
                self.table.get(t).cloned().ok_or_else(|| {
                    BackendError::InvalidRequest(format!(
                        "no scripted embedding for text: {:?}",
                        t.chars().take(40).collect::<String>()
                    ))
                })
            })
            .collect()
    }
}

/// Deterministic pseudo-embedding derived from a content digest. Stable
/// across runs and hosts; useful for end-to-end fixtures where only
/// determinism matters, not semantics.
pub struct HashedEmbedding {
    id: String,
    dim: usize,
}

impl HashedEmbedding {
    pub fn new(dim: usize) -> Self {
        HashedEmbedding {
            id: format!("hashed:{dim}"),
            dim,
        }
    }
}

impl EmbeddingBackend for HashedEmbedding {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        Ok(texts
            .iter()
            .map(|text| {
                (0..self.dim)
                    .map(|component| {
                        let mut hasher = Sha256::new();
                        hasher.update(text.as_bytes());
                        hasher.update((component as u64).to_le_bytes());
                        let digest = hasher.finalize();
                        let mut raw = [0u8; 8];
                        raw.copy_from_slice(&digest[..8]);
                        // Map the top 53 bits onto [-1, 1].
                        let unit = (u64::from_le_bytes(raw) >> 11) as f64
                            / (1u64 << 53) as f64;
                        2.0 * unit - 1.0
                    })
                    .collect()
            })
            .collect())
    }
}
