//! Text → vector. Providers sit behind [`EmbeddingProvider`]; the local
//! hashed n-gram embedder needs no network and is bitwise reproducible.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::http::HttpClient;
use crate::model::{l2_norm, EmbeddedItem, EventId};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EmbedError {
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("embedding provider returned {got} vectors for {expected} inputs")]
    CountMismatch { expected: usize, got: usize },
    #[error("embedding provider returned a vector of dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding provider returned a non-finite value")]
    NonFinite,
}

pub trait EmbeddingProvider: Send + Sync {
    /// Identifier recorded next to stored vectors, e.g. `local-ngram-d64-s0`.
    fn id(&self) -> String;
    fn dimension(&self) -> usize;
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError>;
}

/// Hashed character 3–5-gram bag with signed feature hashing.
#[derive(Debug, Clone)]
pub struct LocalEmbedder {
    dimension: usize,
    seed: u64,
}

impl LocalEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        LocalEmbedder { dimension, seed }
    }

    pub fn embed(&self, text: &str) -> Vec<f32> {
        let normalized = text.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ");
        let mut acc = vec![0f64; self.dimension];
        if normalized.is_empty() {
            return basis(self.dimension);
        }
        let chars: Vec<char> = format!(" {normalized} ").chars().collect();
        let mut buf = String::new();
        for n in 3..=5 {
            for window in chars.windows(n) {
                buf.clear();
                buf.extend(window);
                let h = feature_hash(self.seed, buf.as_bytes());
                let idx = (h % self.dimension as u64) as usize;
                acc[idx] += if h >> 63 == 1 { -1.0 } else { 1.0 };
            }
        }
        let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return basis(self.dimension);
        }
        acc.iter().map(|x| (x / norm) as f32).collect()
    }
}

fn basis(d: usize) -> Vec<f32> {
    let mut v = vec![0f32; d];
    v[0] = 1.0;
    v
}

/// FNV-1a over the seed and the n-gram bytes, finished with the splitmix64
/// mixer.
fn feature_hash(seed: u64, bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for b in seed.to_le_bytes().iter().chain(bytes) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(PRIME);
    }
    splitmix64(h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl EmbeddingProvider for LocalEmbedder {
    fn id(&self) -> String {
        format!("local-ngram-d{}-s{}", self.dimension, self.seed)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        Ok(texts.iter().map(|t| self.embed(t)).collect())
    }
}

/// OpenAI-compatible `/embeddings` endpoint.
pub struct RemoteEmbedder {
    http: Arc<dyn HttpClient>,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    dimension: usize,
}

impl RemoteEmbedder {
    pub fn new(
        http: Arc<dyn HttpClient>,
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        dimension: usize,
    ) -> Self {
        RemoteEmbedder { http, endpoint: endpoint.into(), model: model.into(), api_key, dimension }
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn id(&self) -> String {
        format!("remote-{}", self.model)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let auth = self.api_key.as_ref().map(|k| format!("Bearer {k}"));
        let headers: Vec<(&str, &str)> = auth.iter().map(|a| ("authorization", a.as_str())).collect();
        let body = json!({ "model": self.model, "input": texts });
        let resp = self
            .http
            .post_json(&self.endpoint, &headers, &body)
            .map_err(|e| EmbedError::ProviderUnavailable(e.0))?;
        if !resp.is_success() {
            return Err(EmbedError::ProviderUnavailable(format!("status {}", resp.status)));
        }
        let doc: Value = serde_json::from_slice(&resp.body)
            .map_err(|e| EmbedError::ProviderUnavailable(format!("bad payload: {e}")))?;
        let data = doc
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| EmbedError::ProviderUnavailable("bad payload: no data".into()))?;
        let mut rows: Vec<(usize, Vec<f32>)> = Vec::with_capacity(data.len());
        for (pos, row) in data.iter().enumerate() {
            let index = row.get("index").and_then(Value::as_u64).map_or(pos, |i| i as usize);
            let vector = row
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| EmbedError::ProviderUnavailable("bad payload: no embedding".into()))?
                .iter()
                .map(|x| x.as_f64().map(|f| f as f32).ok_or(EmbedError::NonFinite))
                .collect::<Result<Vec<f32>, _>>()?;
            rows.push((index, vector));
        }
        rows.sort_by_key(|(i, _)| *i);
        Ok(rows.into_iter().map(|(_, v)| v).collect())
    }
}

/// Rescales to unit length. A zero vector becomes the first basis vector.
pub fn normalize(mut v: Vec<f32>) -> Result<Vec<f32>, EmbedError> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(EmbedError::NonFinite);
    }
    let norm = l2_norm(&v);
    if norm == 0.0 {
        return Ok(basis(v.len()));
    }
    for x in &mut v {
        *x = (f64::from(*x) / norm) as f32;
    }
    Ok(v)
}

/// Embedding stopped part-way; `done` holds every item finished so far and
/// can be passed back to [`embed_dataset`] to resume.
#[derive(Debug, thiserror::Error)]
#[error("embedding stopped after {} items: {source}", done.len())]
pub struct EmbedInterrupted {
    pub done: Vec<EmbeddedItem>,
    pub source: EmbedError,
}

/// Embeds `(id, text)` pairs in batches. Items already present in `resume`
/// (matched by position and id) are not sent again.
pub fn embed_dataset(
    items: &[(EventId, String)],
    provider: &dyn EmbeddingProvider,
    batch_size: usize,
    resume: Vec<EmbeddedItem>,
) -> Result<Vec<EmbeddedItem>, EmbedInterrupted> {
    let d = provider.dimension();
    let mut done: Vec<EmbeddedItem> = resume
        .into_iter()
        .zip(items)
        .take_while(|(e, (id, _))| &e.item_id == id && e.vector.len() == d)
        .map(|(e, _)| e)
        .collect();
    for chunk in items[done.len()..].chunks(batch_size.max(1)) {
        let texts: Vec<String> = chunk.iter().map(|(_, t)| t.clone()).collect();
        let result = provider.embed_batch(&texts).and_then(|vectors| {
            if vectors.len() != chunk.len() {
                return Err(EmbedError::CountMismatch { expected: chunk.len(), got: vectors.len() });
            }
            vectors
                .into_iter()
                .zip(chunk)
                .map(|(v, (id, _))| {
                    if v.len() != d {
                        return Err(EmbedError::DimensionMismatch { expected: d, got: v.len() });
                    }
                    Ok(EmbeddedItem::new(id.clone(), normalize(v)?))
                })
                .collect::<Result<Vec<_>, _>>()
        });
        match result {
            Ok(batch) => done.extend(batch),
            Err(source) => return Err(EmbedInterrupted { done, source }),
        }
    }
    Ok(done)
}

/// Sidecar describing a vector file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VectorSidecar {
    pub dimension: usize,
    pub count: usize,
    pub item_ids: Vec<EventId>,
    pub provider: String,
}

#[derive(Debug, thiserror::Error)]
pub enum VectorFileError {
    #[error("vector file has {got} bytes, sidecar implies {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("sidecar lists {ids} ids for {count} vectors")]
    IdCountMismatch { ids: usize, count: usize },
}

/// Packs vectors as consecutive little-endian f32 rows.
pub fn encode_vectors(items: &[EmbeddedItem], provider: &str) -> (Vec<u8>, VectorSidecar) {
    let dimension = items.first().map_or(0, |e| e.vector.len());
    let mut bytes = Vec::with_capacity(items.len() * dimension * 4);
    for item in items {
        debug_assert_eq!(item.vector.len(), dimension);
        for x in &item.vector {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    let sidecar = VectorSidecar {
        dimension,
        count: items.len(),
        item_ids: items.iter().map(|e| e.item_id.clone()).collect(),
        provider: provider.to_string(),
    };
    (bytes, sidecar)
}

pub fn decode_vectors(bytes: &[u8], sidecar: &VectorSidecar) -> Result<Vec<EmbeddedItem>, VectorFileError> {
    let expected = sidecar.count * sidecar.dimension * 4;
    if bytes.len() != expected {
        return Err(VectorFileError::SizeMismatch { expected, got: bytes.len() });
    }
    if sidecar.item_ids.len() != sidecar.count {
        return Err(VectorFileError::IdCountMismatch { ids: sidecar.item_ids.len(), count: sidecar.count });
    }
    let floats: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let d = sidecar.dimension.max(1);
    Ok(sidecar
        .item_ids
        .iter()
        .zip(floats.chunks(d))
        .map(|(id, v)| EmbeddedItem::new(id.clone(), v.to_vec()))
        .collect())
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
