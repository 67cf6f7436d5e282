use std::sync::Arc;

use thiserror::Error;

use super::Embedding;
use crate::par::Semaphore;
use crate::transport::{post_with_retry, CallError, HttpRequest, HttpTransport, RetryPolicy};

pub const DEFAULT_LOCAL_DIM: usize = 256;
pub const DEFAULT_REMOTE_EMBEDDING_MODEL: &str = "text-embedding-3-large";

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error(transparent)]
    RemoteUnavailable(#[from] CallError),
    #[error("malformed embedding response: {0}")]
    BadResponse(String),
}

pub trait Embedder: Send + Sync {
    fn model_id(&self) -> &str;
    fn embed(&self, text: &str) -> Result<Embedding, EmbedError>;
}

/// Deterministic offline embedder: counts of hashed character 1- to 3-grams
/// over the lower-cased text padded with `^` and `$`.
#[derive(Debug, Clone)]
pub struct LocalEmbedder {
    dim: usize,
    model_id: String,
}

impl LocalEmbedder {
    pub fn new(dim: usize) -> Self {
        let dim = dim.max(1);
        Self {
            dim,
            model_id: format!("local-ngram-{dim}"),
        }
    }
}

impl Default for LocalEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_LOCAL_DIM)
    }
}

fn fnv1a(chars: &[char]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut buf = [0u8; 4];
    for c in chars {
        for b in c.encode_utf8(&mut buf).bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

impl Embedder for LocalEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let chars: Vec<char> = std::iter::once('^')
            .chain(trimmed.to_lowercase().chars())
            .chain(std::iter::once('$'))
            .collect();
        let mut values = vec![0.0; self.dim];
        for n in 1..=3 {
            for gram in chars.windows(n) {
                values[(fnv1a(gram) % self.dim as u64) as usize] += 1.0;
            }
        }
        Ok(Embedding::new(self.model_id.clone(), values))
    }
}

/// Embeddings over an OpenAI-compatible `/embeddings` endpoint.
pub struct RemoteEmbedder {
    transport: Arc<dyn HttpTransport>,
    base_url: String,
    api_key: Option<String>,
    model: String,
    policy: RetryPolicy,
    limit: Semaphore,
}

impl RemoteEmbedder {
    pub fn new(
        transport: Arc<dyn HttpTransport>,
        base_url: impl Into<String>,
        api_key: Option<String>,
        model: impl Into<String>,
        max_in_flight: usize,
    ) -> Self {
        Self {
            transport,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            model: model.into(),
            policy: RetryPolicy::default(),
            limit: Semaphore::new(max_in_flight),
        }
    }

    pub fn with_policy(mut self, policy: RetryPolicy) -> Self {
        self.policy = policy;
        self
    }
}

impl Embedder for RemoteEmbedder {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let request = HttpRequest {
            url: format!("{}/embeddings", self.base_url),
            bearer: self.api_key.clone(),
            body: serde_json::json!({ "model": self.model, "input": text }),
            timeout: self.policy.timeout,
        };
        let (response, _) = {
            let _permit = self.limit.acquire();
            post_with_retry(self.transport.as_ref(), &request, &self.policy)?
        };
        let body: serde_json::Value = serde_json::from_str(&response.body)
            .map_err(|e| EmbedError::BadResponse(e.to_string()))?;
        let values = body["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| EmbedError::BadResponse("missing data[0].embedding".into()))?
            .iter()
            .map(|v| {
                v.as_f64()
                    .ok_or_else(|| EmbedError::BadResponse("non-numeric component".into()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if values.is_empty() {
            return Err(EmbedError::BadResponse("empty embedding".into()));
        }
        Ok(Embedding::new(self.model.clone(), values))
    }
}
