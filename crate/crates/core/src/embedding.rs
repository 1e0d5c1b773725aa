//! Text embeddings and cosine similarity.

use serde::{Deserialize, Serialize};
use std::time::Duration;

pub const DEFAULT_DIM: usize = 256;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EmbeddingError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("non-finite component at index {0}")]
    NonFinite(usize),
    #[error("remote embedding request failed (status {status:?}): {excerpt}")]
    Remote { status: Option<u16>, excerpt: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(i));
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Cosine similarity with a degeneracy flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub value: f64,
    /// Set when either input is the zero vector; `value` is then 0.
    pub degenerate: bool,
}

pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<Similarity, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.values.iter().zip(&b.values) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(Similarity {
            value: 0.0,
            degenerate: true,
        });
    }
    let raw = dot / (na * nb).sqrt();
    debug_assert!(raw.abs() <= 1.0 + 1e-12, "cosine out of range: {raw}");
    Ok(Similarity {
        value: raw.clamp(-1.0, 1.0),
        degenerate: false,
    })
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    cosine(a, b).map(|s| s.value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderConfig {
    Hashing { dim: usize, seed: u64 },
    Remote { base_url: String, model: String, dim: usize },
    Other { name: String, dim: usize },
}

pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError>;
    fn config(&self) -> ProviderConfig;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

/// Lowercased alphanumeric runs; apostrophes inside a word are kept.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else if (c == '\'' || c == '’')
            && !current.is_empty()
            && chars.peek().is_some_and(|n| n.is_alphanumeric())
        {
            current.push('\'');
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Seeded FNV-1a, stable across platforms and releases.
fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed.wrapping_mul(0x100_0000_01b3);
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    // final avalanche so low bits (used for the bucket) depend on every byte
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h
}

/// Feature-hashing bag-of-words embedder: each token adds ±1 to bucket
/// `hash mod dim` (sign from an independent hash) and the result is
/// L2-normalized.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
    seed: u64,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIM, 0)
    }
}

impl HashingEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dim must be positive");
        Self { dim, seed }
    }

    pub fn bucket(&self, token: &str) -> (usize, f64) {
        let idx = (fnv1a(self.seed, token.as_bytes()) % self.dim as u64) as usize;
        let sign = if fnv1a(self.seed ^ 0x5bd1_e995, token.as_bytes()) & 1 == 0 {
            1.0
        } else {
            -1.0
        };
        (idx, sign)
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let mut values = vec![0.0; self.dim];
        for token in tokenize(text) {
            let (idx, sign) = self.bucket(&token);
            values[idx] += sign;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(EmbeddingVector { values })
    }

    fn config(&self) -> ProviderConfig {
        ProviderConfig::Hashing {
            dim: self.dim,
            seed: self.seed,
        }
    }
}

/// OpenAI-compatible `/embeddings` client.
pub struct RemoteEmbedder {
    base_url: String,
    model: String,
    api_key: Option<String>,
    dim: usize,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

impl RemoteEmbedder {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, dim: usize) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key: None,
            dim,
            agent,
        }
    }

    /// Reads `EMBEDDINGS_BASE_URL` and `EMBEDDINGS_API_KEY`.
    pub fn from_env(model: impl Into<String>, dim: usize) -> Option<Self> {
        let base = std::env::var("EMBEDDINGS_BASE_URL").ok()?;
        let mut e = Self::new(base, model, dim);
        e.api_key = std::env::var("EMBEDDINGS_API_KEY").ok();
        Some(e)
    }

    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        if text.trim().is_empty() {
            return Ok(EmbeddingVector::zeros(self.dim));
        }
        let mut out = self.embed_batch(&[text])?;
        Ok(out.remove(0))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let url = format!("{}/embeddings", self.base_url);
        let mut req = self.agent.post(&url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(EmbeddingRequest {
                model: &self.model,
                input: texts,
            })
            .map_err(|e| EmbeddingError::Remote {
                status: None,
                excerpt: e.to_string(),
            })?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| EmbeddingError::Remote {
                status: Some(status),
                excerpt: e.to_string(),
            })?;
        if !(200..300).contains(&status) {
            return Err(EmbeddingError::Remote {
                status: Some(status),
                excerpt: excerpt(&body),
            });
        }
        let parsed: EmbeddingResponse =
            serde_json::from_str(&body).map_err(|e| EmbeddingError::Remote {
                status: Some(status),
                excerpt: format!("{e}: {}", excerpt(&body)),
            })?;
        if parsed.data.len() != texts.len() {
            return Err(EmbeddingError::Remote {
                status: Some(status),
                excerpt: format!("expected {} embeddings, got {}", texts.len(), parsed.data.len()),
            });
        }
        parsed
            .data
            .into_iter()
            .map(|d| {
                if d.embedding.len() != self.dim {
                    return Err(EmbeddingError::DimensionMismatch {
                        left: self.dim,
                        right: d.embedding.len(),
                    });
                }
                EmbeddingVector::new(d.embedding)
            })
            .collect()
    }

    fn config(&self) -> ProviderConfig {
        ProviderConfig::Remote {
            base_url: self.base_url.clone(),
            model: self.model.clone(),
            dim: self.dim,
        }
    }
}

pub(crate) fn excerpt(body: &str) -> String {
    const MAX: usize = 200;
    match body.char_indices().nth(MAX) {
        Some((i, _)) => format!("{}…", &body[..i]),
        None => body.to_string(),
    }
}
