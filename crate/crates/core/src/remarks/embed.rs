use std::time::Duration;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use super::llm::Remark;
use crate::error::{Error, Result};

pub const EMBEDDING_DIM: usize = 768;
pub const MAX_TOKENS: usize = 4096;
pub const DEFAULT_HASH_SEED: u64 = 0x6d69_7261_636c_65;
pub const DEFAULT_PROJECTION_SEED: u64 = 0x7072_6f6a_6563_74;

/// Raw (pre-projection) text embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEmbedding {
    pub vector: Vec<f64>,
    /// Text had no tokens; `vector` is all zeros.
    pub degenerate: bool,
    pub truncated: bool,
}

/// Text encoder contract: deterministic, `dim()`-wide output.
pub trait RemarkEmbedder: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize {
        EMBEDDING_DIM
    }

    fn max_tokens(&self) -> usize {
        MAX_TOKENS
    }

    fn embed_raw(&self, text: &str) -> Result<RawEmbedding>;
}

/// Lowercased alphanumeric word tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// 64-bit FNV-1a with the seed folded into the offset basis.
pub fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET ^ seed.wrapping_mul(PRIME);
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Bag-of-words feature hashing into `dim` bins, L2-normalized.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    seed: u64,
    dim: usize,
}

impl HashingEmbedder {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            dim: EMBEDDING_DIM,
        }
    }

    pub fn bin(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes(), self.seed) % self.dim as u64) as usize
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_HASH_SEED)
    }
}

impl RemarkEmbedder for HashingEmbedder {
    fn name(&self) -> &str {
        "feature-hashing-768"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_raw(&self, text: &str) -> Result<RawEmbedding> {
        let mut tokens = tokenize(text);
        let truncated = tokens.len() > MAX_TOKENS;
        if truncated {
            log::warn!("remark has {} tokens, truncating to {MAX_TOKENS}", tokens.len());
            tokens.truncate(MAX_TOKENS);
        }
        let mut v = vec![0.0; self.dim];
        for t in &tokens {
            v[self.bin(t)] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(RawEmbedding {
            vector: v,
            degenerate: tokens.is_empty(),
            truncated,
        })
    }
}

/// Client for an external embedding service returning
/// `{"data": [{"embedding": [...]}]}` or `{"embedding": [...]}`.
pub struct ExternalEmbedder {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum EmbeddingResponse {
    List { data: Vec<EmbeddingItem> },
    Single { embedding: Vec<f64> },
}

#[derive(Deserialize)]
struct EmbeddingItem {
    embedding: Vec<f64>,
}

impl ExternalEmbedder {
    pub fn new(endpoint: String, model: String, api_key: Option<String>) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(Self {
            endpoint,
            model,
            api_key,
            http,
        })
    }
}

impl RemarkEmbedder for ExternalEmbedder {
    fn name(&self) -> &str {
        &self.model
    }

    fn embed_raw(&self, text: &str) -> Result<RawEmbedding> {
        let mut req = self
            .http
            .post(&self.endpoint)
            .json(&json!({"model": self.model, "input": text}));
        if let Some(k) = &self.api_key {
            req = req.bearer_auth(k);
        }
        let resp = req
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| Error::Remote {
                attempts: 1,
                message: e.to_string(),
            })?;
        let parsed: EmbeddingResponse = resp.json().map_err(|e| Error::Remote {
            attempts: 1,
            message: format!("malformed embedding response: {e}"),
        })?;
        let vector = match parsed {
            EmbeddingResponse::List { mut data } if !data.is_empty() => data.swap_remove(0).embedding,
            EmbeddingResponse::List { .. } => Vec::new(),
            EmbeddingResponse::Single { embedding } => embedding,
        };
        if vector.len() != EMBEDDING_DIM {
            return Err(Error::Config(format!(
                "embedding service returned {} dimensions, expected {EMBEDDING_DIM}",
                vector.len()
            )));
        }
        let degenerate = vector.iter().all(|&v| v == 0.0);
        Ok(RawEmbedding {
            vector,
            degenerate,
            truncated: false,
        })
    }
}

/// Frozen `dim x dim` linear map applied after the text encoder. Entries are
/// `N(0, 1/dim)` from a fixed seed, so columns are nearly orthonormal.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenProjection {
    seed: u64,
    matrix: Array2<f64>,
}

impl FrozenProjection {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (EMBEDDING_DIM as f64).sqrt();
        let matrix = Array2::from_shape_simple_fn((EMBEDDING_DIM, EMBEDDING_DIM), || {
            scale * crate::variational::normal::<f64, _>(&mut rng)
        });
        Self { seed, matrix }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != EMBEDDING_DIM {
            return Err(Error::Shape(format!(
                "projection expects {EMBEDDING_DIM} inputs, got {}",
                v.len()
            )));
        }
        let x = Array1::from(v.to_vec());
        Ok(self.matrix.dot(&x).to_vec())
    }

    /// SHA-256 over the little-endian matrix entries, hex encoded.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in self.matrix.iter() {
            h.update(v.to_le_bytes());
        }
        hex_string(&h.finalize())
    }
}

impl Default for FrozenProjection {
    fn default() -> Self {
        Self::new(DEFAULT_PROJECTION_SEED)
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Final remark-channel embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct RemarkEmbedding {
    pub vector: Vec<f64>,
    pub degenerate: bool,
}

/// Encodes a remark and applies the frozen projection. Generated and
/// clinician-edited remarks take exactly this path.
pub fn embed_remark(
    remark: &Remark,
    embedder: &dyn RemarkEmbedder,
    projection: &FrozenProjection,
) -> Result<RemarkEmbedding> {
    if remark.text.trim().is_empty() {
        return Err(Error::Input("remark text is empty".into()));
    }
    if embedder.dim() != EMBEDDING_DIM {
        return Err(Error::Config(format!(
            "embedder {} has dimension {}, expected {EMBEDDING_DIM}",
            embedder.name(),
            embedder.dim()
        )));
    }
    let raw = embedder.embed_raw(&remark.text)?;
    if raw.degenerate {
        log::warn!("remark embedded to the zero vector (no tokens)");
    }
    Ok(RemarkEmbedding {
        vector: projection.apply(&raw.vector)?,
        degenerate: raw.degenerate,
    })
}
