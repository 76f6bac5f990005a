//! Event text to fixed-dimension vector.
//!
//! Text is normalized by [`preprocess`], split into subwords by
//! [`wordpiece_tokenize`] and mapped to an [`EventEmbedding`] by an
//! [`EmbeddingProvider`]. Two providers ship here: a lookup over a table of
//! precomputed contextual vectors ([`TableProvider`]) and a deterministic
//! feature-hashing fallback ([`HashingProvider`]) that needs no encoder.

mod preprocess;
mod table;
mod wordpiece;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

pub use preprocess::preprocess;
pub use table::{load_embedding_table, EmbeddingTable, TableProvider, MAGIC as TABLE_MAGIC};
pub use wordpiece::{wordpiece_tokenize, Vocabulary, CONTINUATION_PREFIX, DEFAULT_UNK};

pub type TokenSequence = Vec<String>;

/// Dimension of the reference encoder's hidden states.
pub const DEFAULT_EMBEDDING_DIM: usize = 768;

#[derive(Debug, Error)]
pub enum RepresentError {
    #[error("embedding table format error: {0}")]
    Format(String),
    #[error("embedding table has dim {file}, run is configured for {configured}")]
    DimMismatch { file: usize, configured: usize },
    #[error("no embedding for key {key:#018x} ({text:?})")]
    MissingEmbedding { key: u64, text: String },
    #[error("vocabulary: {0}")]
    Vocabulary(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl RepresentError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        RepresentError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventEmbedding {
    pub values: Vec<f32>,
}

impl EventEmbedding {
    pub fn zeros(dim: usize) -> Self {
        EventEmbedding { values: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Maps preprocessed event text to a vector. Implementations must be
/// deterministic: the same text always yields the same bits.
pub trait EmbeddingProvider: Send + Sync {
    fn embedding_dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EventEmbedding, RepresentError>;
}

pub fn embed_event(text: &str, provider: &dyn EmbeddingProvider) -> Result<EventEmbedding, RepresentError> {
    provider.embed(text)
}

/// Preprocesses raw event text and embeds it.
pub fn represent_event(raw: &str, provider: &dyn EmbeddingProvider) -> Result<EventEmbedding, RepresentError> {
    provider.embed(&preprocess(raw))
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    fnv1a64_extend(FNV_OFFSET, bytes)
}

fn fnv1a64_extend(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

// splitmix64 finalizer; FNV's high bits are weak on short inputs.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn feature_hash(seed: u64, parts: &[&str]) -> u64 {
    let mut h = fnv1a64_extend(FNV_OFFSET, &seed.to_le_bytes());
    h = fnv1a64_extend(h, &[parts.len() as u8]);
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            h = fnv1a64_extend(h, &[0x1f]);
        }
        h = fnv1a64_extend(h, p.as_bytes());
    }
    mix64(h)
}

/// Signed feature hashing over tokens and adjacent-token bigrams, scaled by
/// `1/sqrt(token count)`. No tokens gives the zero vector.
pub fn hash_embed_tokens<S: AsRef<str>>(tokens: &[S], dim: usize, seed: u64) -> EventEmbedding {
    assert!(dim >= 1, "embedding dim must be at least 1");
    let mut acc = vec![0f64; dim];
    let mut add = |h: u64| {
        let idx = (h % dim as u64) as usize;
        acc[idx] += if h >> 63 == 1 { -1.0 } else { 1.0 };
    };
    for t in tokens {
        add(feature_hash(seed, &[t.as_ref()]));
    }
    for w in tokens.windows(2) {
        add(feature_hash(seed, &[w[0].as_ref(), w[1].as_ref()]));
    }
    if tokens.is_empty() {
        return EventEmbedding::zeros(dim);
    }
    let scale = 1.0 / (tokens.len() as f64).sqrt();
    EventEmbedding {
        values: acc.into_iter().map(|v| (v * scale) as f32).collect(),
    }
}

/// [`hash_embed_tokens`] over the whitespace words of `text`.
pub fn hash_embed(text: &str, dim: usize, seed: u64) -> EventEmbedding {
    let words: Vec<&str> = text.split_whitespace().collect();
    hash_embed_tokens(&words, dim, seed)
}

/// Feature-hashing provider. Tokens are WordPiece subwords when a
/// vocabulary is attached, whitespace words otherwise.
#[derive(Debug, Clone)]
pub struct HashingProvider {
    dim: usize,
    seed: u64,
    vocab: Option<Arc<Vocabulary>>,
}

impl HashingProvider {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim >= 1, "embedding dim must be at least 1");
        HashingProvider { dim, seed, vocab: None }
    }

    pub fn with_vocabulary(mut self, vocab: Arc<Vocabulary>) -> Self {
        self.vocab = Some(vocab);
        self
    }
}

impl EmbeddingProvider for HashingProvider {
    fn embedding_dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EventEmbedding, RepresentError> {
        Ok(match &self.vocab {
            Some(v) => hash_embed_tokens(&wordpiece_tokenize(text, v), self.dim, self.seed),
            None => hash_embed(text, self.dim, self.seed),
        })
    }
}

/// Arithmetic mean of per-subword vectors; the pooling the table exporter
/// applies before writing each event record.
pub fn mean_pool(vectors: &[Vec<f32>]) -> Option<Vec<f32>> {
    let first = vectors.first()?;
    let mut acc = vec![0f64; first.len()];
    for v in vectors {
        assert_eq!(v.len(), acc.len(), "ragged subword vectors");
        for (a, x) in acc.iter_mut().zip(v) {
            *a += *x as f64;
        }
    }
    let n = vectors.len() as f64;
    Some(acc.into_iter().map(|a| (a / n) as f32).collect())
}
