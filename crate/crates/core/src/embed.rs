//! Fixed-dimension unit vectors for clustering instances.
//!
//! The local featurizer hashes every character 3-gram (a text shorter than
//! three characters counts as a single gram) with 64-bit FNV-1a over its UTF-8
//! bytes, adds 1 to bucket `hash % dimension`, then L2-normalizes. The empty
//! text maps to the unit basis vector `e_0`.
//!
//! The remote provider speaks the OpenAI-compatible embedding schema:
//! `POST {"input": [text, ...]}` returning `{"data": [{"embedding": [..]}, ..]}`.
//! A bearer token is read from `SSR_EMBED_API_KEY` when set.

use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

use crate::corpus::{ContentMode, Instance};
use crate::http::{token_from_env, HttpError, JsonClient, RetryPolicy};
use crate::seeds::fnv1a64;

pub const DEFAULT_DIMENSION: usize = 256;
pub const MIN_DIMENSION: usize = 8;
pub const EMBED_TOKEN_ENV: &str = "SSR_EMBED_API_KEY";

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding dimension {0} is below the minimum of {MIN_DIMENSION}")]
    Dimension(usize),
    #[error(transparent)]
    Http(#[from] HttpError),
    #[error("embedding response has unexpected shape: {0}")]
    Format(String),
}

/// Unit-norm real vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Normalizes `values`; an all-zero vector becomes `e_0`.
    pub fn normalized(mut values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 && norm.is_finite() {
            values.iter_mut().for_each(|v| *v /= norm);
        } else {
            values.iter_mut().for_each(|v| *v = 0.0);
            if let Some(first) = values.first_mut() {
                *first = 1.0;
            }
        }
        Self(values)
    }

    /// Wraps raw coordinates without normalizing (clustering inputs, tests).
    pub fn raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn cosine(&self, other: &Self) -> f64 {
        let d = self.norm() * other.norm();
        if d == 0.0 {
            0.0
        } else {
            self.dot(other) / d
        }
    }
}

pub fn embed_local(content: &str, dimension: usize) -> Result<EmbeddingVector, EmbedError> {
    if dimension < MIN_DIMENSION {
        return Err(EmbedError::Dimension(dimension));
    }
    let mut counts = vec![0.0; dimension];
    let chars: Vec<char> = content.chars().collect();
    let mut bump = |gram: &[char]| {
        let s: String = gram.iter().collect();
        counts[(fnv1a64(s.as_bytes()) % dimension as u64) as usize] += 1.0;
    };
    if chars.len() < 3 {
        if !chars.is_empty() {
            bump(&chars);
        }
    } else {
        chars.windows(3).for_each(bump);
    }
    Ok(EmbeddingVector::normalized(counts))
}

/// Text that represents an instance for clustering.
pub fn instance_content(inst: &Instance, mode: ContentMode) -> String {
    match mode {
        ContentMode::InputOnly => inst.input.clone(),
        ContentMode::InputAndOutput => format!("{}\n{}", inst.input, inst.output),
    }
}

pub trait Embedder: Send + Sync {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError>;
}

#[derive(Debug, Clone, Copy)]
pub struct LocalEmbedder {
    pub dimension: usize,
}

impl Default for LocalEmbedder {
    fn default() -> Self {
        Self {
            dimension: DEFAULT_DIMENSION,
        }
    }
}

impl Embedder for LocalEmbedder {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        texts
            .iter()
            .map(|t| embed_local(t, self.dimension))
            .collect()
    }
}

/// Client for an OpenAI-compatible embedding endpoint.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    endpoint: String,
    model: Option<String>,
    client: JsonClient,
    batch_size: usize,
}

impl RemoteEmbedder {
    pub fn new(endpoint: impl Into<String>) -> Result<Self, EmbedError> {
        Self::with_options(
            endpoint,
            None,
            Duration::from_secs(60),
            RetryPolicy::default(),
        )
    }

    pub fn with_options(
        endpoint: impl Into<String>,
        model: Option<String>,
        timeout: Duration,
        retry: RetryPolicy,
    ) -> Result<Self, EmbedError> {
        Ok(Self {
            endpoint: endpoint.into(),
            model,
            client: JsonClient::new(timeout, retry, token_from_env(EMBED_TOKEN_ENV))?,
            batch_size: 64,
        })
    }

    fn request(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let mut body = json!({ "input": texts });
        if let Some(m) = &self.model {
            body["model"] = json!(m);
        }
        let resp = self.client.post(&self.endpoint, &body)?;
        let vectors = parse_embedding_response(&resp)?;
        if vectors.len() != texts.len() {
            return Err(EmbedError::Format(format!(
                "sent {} inputs, received {} embeddings",
                texts.len(),
                vectors.len()
            )));
        }
        Ok(vectors)
    }
}

impl Embedder for RemoteEmbedder {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size) {
            out.extend(self.request(chunk)?);
        }
        Ok(out)
    }
}

pub fn embed_remote(content: &str, endpoint: &str) -> Result<EmbeddingVector, EmbedError> {
    let mut v = RemoteEmbedder::new(endpoint)?.embed_batch(&[content.to_string()])?;
    Ok(v.remove(0))
}

/// Extracts `data[*].embedding` and normalizes each vector. Entries are
/// ordered by their `index` field when every entry carries one.
pub fn parse_embedding_response(resp: &Value) -> Result<Vec<EmbeddingVector>, EmbedError> {
    let data = resp
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| EmbedError::Format("missing \"data\" array".into()))?;
    let mut rows = Vec::with_capacity(data.len());
    for (pos, item) in data.iter().enumerate() {
        let emb = item
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| EmbedError::Format(format!("data[{pos}] has no embedding array")))?;
        let values = emb
            .iter()
            .map(|v| {
                v.as_f64().filter(|x| x.is_finite()).ok_or_else(|| {
                    EmbedError::Format(format!("data[{pos}] has non-numeric entry {v}"))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        if values.is_empty() {
            return Err(EmbedError::Format(format!("data[{pos}] is empty")));
        }
        let index = item.get("index").and_then(Value::as_u64);
        rows.push((index, values));
    }
    if rows.iter().all(|(i, _)| i.is_some()) {
        rows.sort_by_key(|(i, _)| *i);
    }
    Ok(rows
        .into_iter()
        .map(|(_, v)| EmbeddingVector::normalized(v))
        .collect())
}
