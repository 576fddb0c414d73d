//! Text embedders and vector distances.

use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Embedding = Vec<f64>;

/// Maps texts to fixed-dimension vectors. Implementations must be
/// deterministic: the same text always yields the same vector.
pub trait Embedder: Send + Sync {
    fn id(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>>;

    fn embed_one(&self, text: &str) -> Result<Embedding> {
        Ok(self.embed(&[text])?.pop().expect("one vector per text"))
    }
}

/// Hashed character n-gram counts under a seeded Gaussian projection.
///
/// Character bigrams and trigrams of the lowercased, space-padded text are
/// hashed (FNV-1a) into `buckets` counters, projected to `dimension` and
/// L2-normalized. The empty text maps to the zero vector.
pub struct HashedNgramEmbedder {
    id: String,
    buckets: usize,
    dimension: usize,
    /// `buckets` rows of `dimension` entries.
    projection: Vec<f64>,
}

impl HashedNgramEmbedder {
    pub const DIMENSION: usize = 256;
    pub const BUCKETS: usize = 4096;
    pub const DEFAULT_SEED: u64 = 0x5eed;

    pub fn new(seed: u64) -> Self {
        Self::with_shape(seed, Self::BUCKETS, Self::DIMENSION)
    }

    pub fn with_shape(seed: u64, buckets: usize, dimension: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (dimension as f64).sqrt();
        let projection = (0..buckets * dimension)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
            .collect();
        Self {
            id: format!("hashed-ngram-{buckets}x{dimension}-{seed}"),
            buckets,
            dimension,
            projection,
        }
    }

    fn counts(&self, text: &str) -> Vec<(usize, f64)> {
        let chars: Vec<char> = std::iter::once(' ')
            .chain(text.to_lowercase().chars())
            .chain(std::iter::once(' '))
            .collect();
        let mut counts = std::collections::BTreeMap::new();
        for n in 2..=3 {
            for gram in chars.windows(n) {
                let s: String = gram.iter().collect();
                *counts.entry(fnv1a(s.as_bytes()) as usize % self.buckets).or_insert(0.0) += 1.0;
            }
        }
        counts.into_iter().collect()
    }

    fn embed_text(&self, text: &str) -> Embedding {
        let mut v = vec![0.0; self.dimension];
        if text.is_empty() {
            return v;
        }
        for (bucket, count) in self.counts(text) {
            let row = &self.projection[bucket * self.dimension..(bucket + 1) * self.dimension];
            for (x, r) in v.iter_mut().zip(row) {
                *x += count * r;
            }
        }
        let norm = norm(&v);
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl Default for HashedNgramEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_SEED)
    }
}

impl Embedder for HashedNgramEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Vectors looked up by exact text. Unknown texts are an error.
#[derive(Clone, Debug, Default)]
pub struct PrecomputedEmbedder {
    id: String,
    dimension: usize,
    table: std::collections::HashMap<String, Embedding>,
}

impl PrecomputedEmbedder {
    pub fn new(id: &str, dimension: usize) -> Self {
        Self {
            id: id.to_string(),
            dimension,
            table: Default::default(),
        }
    }

    pub fn insert(&mut self, text: &str, vector: Embedding) {
        assert_eq!(vector.len(), self.dimension, "vector dimension");
        self.table.insert(text.to_string(), vector);
    }
}

impl Embedder for PrecomputedEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        texts
            .iter()
            .map(|t| {
                self.table
                    .get(*t)
                    .cloned()
                    .ok_or_else(|| Error::Malformed(format!("no precomputed vector for `{t}`")))
            })
            .collect()
    }
}

/// Client for an OpenAI-compatible `POST {base_url}/embeddings` endpoint.
pub struct RemoteEmbedder {
    id: String,
    base_url: String,
    api_key: Option<String>,
    model: String,
    dimension: usize,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbeddingItem {
    embedding: Vec<f64>,
    #[serde(default)]
    index: usize,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

impl RemoteEmbedder {
    pub fn new(base_url: &str, api_key: Option<String>, model: &str, dimension: usize) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        Self {
            id: format!("remote:{model}"),
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            model: model.to_string(),
            dimension,
            agent,
        }
    }
}

impl Embedder for RemoteEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let body = serde_json::to_string(&EmbeddingRequest {
            model: &self.model,
            input: texts,
        })?;
        let mut call = self
            .agent
            .post(&format!("{}/embeddings", self.base_url))
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = call.send(body.as_str()).map_err(|e| Error::Transport {
            attempts: 1,
            message: e.to_string(),
        })?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Malformed(format!("response body: {e}")))?;
        if !(200..300).contains(&status) {
            return Err(Error::Http { status, body: text });
        }
        let mut parsed: EmbeddingResponse = serde_json::from_str(&text)
            .map_err(|e| Error::Malformed(format!("embedding response: {e}")))?;
        parsed.data.sort_by_key(|d| d.index);
        if parsed.data.len() != texts.len() || parsed.data.iter().any(|d| d.embedding.len() != self.dimension) {
            return Err(Error::Malformed("embedding count or dimension mismatch".into()));
        }
        Ok(parsed.data.into_iter().map(|d| d.embedding).collect())
    }
}

/// Distance between two embeddings.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    /// `1 - cos(a, b)`. A zero vector is at distance 1 from any nonzero
    /// vector and 0 from another zero vector.
    #[default]
    Cosine,
    Euclidean,
}

impl Distance {
    pub fn between(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Distance::Cosine => {
                let (na2, nb2) = (dot(a, a), dot(b, b));
                match (na2 == 0.0, nb2 == 0.0) {
                    (true, true) => 0.0,
                    (true, false) | (false, true) => 1.0,
                    // one square root keeps identical vectors at exactly 0
                    (false, false) => (1.0 - dot(a, b) / (na2 * nb2).sqrt()).clamp(0.0, 2.0),
                }
            }
            Distance::Euclidean => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn local_embedder_contract() {
        let e = HashedNgramEmbedder::default();
        let v = e.embed(&["a great movie", "a great movie", "", "terrible"]).unwrap();
        assert_eq!(v[0], v[1]);
        assert_eq!(v[0].len(), 256);
        assert!((norm(&v[0]) - 1.0).abs() < 1e-6);
        assert!((norm(&v[3]) - 1.0).abs() < 1e-6);
        assert!(v[2].iter().all(|x| *x == 0.0));
        let again = HashedNgramEmbedder::default().embed_one("terrible").unwrap();
        assert_eq!(again, v[3]);
    }

    #[test]
    fn similar_texts_are_closer() {
        let e = HashedNgramEmbedder::default();
        let v = e.embed(&["i am so happy today", "i am so happy tonight", "the tax office closed"]).unwrap();
        let d = Distance::Cosine;
        assert!(d.between(&v[0], &v[1]) < d.between(&v[0], &v[2]));
    }

    #[test]
    fn cosine_conventions() {
        let d = Distance::Cosine;
        assert_eq!(d.between(&[1.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((d.between(&[1.0, 0.0], &[0.0, 2.0]) - 1.0).abs() < 1e-12);
        assert_eq!(d.between(&[0.0, 0.0], &[0.0, 2.0]), 1.0);
        assert_eq!(d.between(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((Distance::Euclidean.between(&[0.0, 0.0], &[3.0, 4.0]) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn fnv1a_reference_values() {
        // published FNV-1a 64-bit test vectors
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x8594_4171_f739_67e8);
    }
}
