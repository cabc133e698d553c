//! The two CLS-style embeddings: a trainable text-side encoding of the post
//! and a frozen feature-side encoding of the serialized LLM features, plus
//! the named-encoder registry that makes swapping either side a pure config
//! change.
//!
//! Encoders here are deterministic hashed embedding bags: each whitespace
//! token hashes to a row of a seeded lookup table and the embedding is the
//! mean of the selected rows. They stand in for pretrained transformer
//! encoders at desk scale while honoring the same contract (fixed hidden
//! size, truncation, eval-mode determinism, frozen-parameter digests); a
//! transformer backend slots in behind the same registry by name.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use sha2::{Digest, Sha256};

use crate::extraction::{hex, FeatureSet};
use crate::rng::{fnv1a64, SplitMix64};

/// Which side of the fusion an embedding belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    TextSide,
    FeatureSide,
}

/// Pooling is fixed: the whole-input summary vector (the first-token /
/// `[CLS]` slot of a transformer backend).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    ClsFirstToken,
}

/// A real vector tagged with the side it came from.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub role: Role,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, role: Role) -> Self {
        Self { values, role }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Everything needed to build one encoder deterministically.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EncoderSpec {
    pub name: String,
    pub trainable: bool,
    pub max_tokens: usize,
    pub pooling: Pooling,
    pub hidden_size: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl EncoderSpec {
    pub fn new(name: impl Into<String>, hidden_size: usize, vocab_size: usize, seed: u64) -> Self {
        Self {
            name: name.into(),
            trainable: true,
            max_tokens: DEFAULT_MAX_TOKENS,
            pooling: Pooling::ClsFirstToken,
            hidden_size,
            vocab_size,
            seed,
        }
    }

    pub fn frozen(mut self) -> Self {
        self.trainable = false;
        self
    }
}

pub const DEFAULT_MAX_TOKENS: usize = 512;

/// Hidden size the default encoder specs declare, mirroring base-size
/// transformer geometry.
pub const DEFAULT_HIDDEN_SIZE: usize = 768;
const DEFAULT_VOCAB_SIZE: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EmbeddingError {
    #[error("failed to load encoder: {0}")]
    EncoderLoad(String),
    #[error("tokenization produced no tokens for the input")]
    Tokenization,
    #[error("encoder '{0}' is trainable but the feature side requires a frozen encoder")]
    NotFrozen(String),
    #[error("unknown encoder name '{0}'")]
    UnknownEncoder(String),
}

/// Named encoder specs. The detector (text side) and feature-embedding
/// encoders are looked up by name from config, so ablation swaps never touch
/// code.
#[derive(Debug, Clone)]
pub struct EncoderRegistry {
    specs: BTreeMap<String, EncoderSpec>,
}

impl EncoderRegistry {
    /// Registry preloaded with the three built-in encoder families.
    pub fn with_builtins() -> Self {
        let mut registry = Self {
            specs: BTreeMap::new(),
        };
        registry.register(EncoderSpec::new(
            "detector-default",
            DEFAULT_HIDDEN_SIZE,
            DEFAULT_VOCAB_SIZE,
            0x4853_445f_3031,
        ));
        registry.register(
            EncoderSpec::new(
                "feature-default",
                DEFAULT_HIDDEN_SIZE,
                DEFAULT_VOCAB_SIZE,
                0x0046_455f_3031,
            )
            .frozen(),
        );
        registry.register(EncoderSpec::new(
            "alt-encoder",
            DEFAULT_HIDDEN_SIZE,
            DEFAULT_VOCAB_SIZE,
            0x414c_545f_3031,
        ));
        registry
    }

    pub fn register(&mut self, spec: EncoderSpec) {
        self.specs.insert(spec.name.clone(), spec);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.specs.keys().map(String::as_str)
    }

    /// Resolve a spec for a role. The feature side is always frozen no
    /// matter how the spec was registered; the text side keeps the spec's
    /// own trainability (trainable for all builtins).
    pub fn resolve(&self, name: &str, role: Role) -> Result<EncoderSpec, EmbeddingError> {
        let mut spec = self
            .specs
            .get(name)
            .cloned()
            .ok_or_else(|| EmbeddingError::UnknownEncoder(name.to_owned()))?;
        if role == Role::FeatureSide {
            spec.trainable = false;
        }
        Ok(spec)
    }
}

/// Token indices cached by a forward pass, for the backward pass.
#[derive(Debug, Clone)]
pub struct BagCache {
    pub indices: Vec<usize>,
}

/// Deterministic hashed embedding-bag encoder.
///
/// Whitespace tokens are hashed (FNV-1a) into `vocab_size` rows of a seeded
/// `vocab_size x hidden_size` table; the encoding is the mean of the selected
/// rows, truncated to `max_tokens` tokens. In eval mode it is a pure function
/// of the text; when `trainable`, gradients flow back into the table rows the
/// forward pass touched.
#[derive(Debug, Clone)]
pub struct HashedBagEncoder {
    spec: EncoderSpec,
    table: Vec<f64>,
}

impl HashedBagEncoder {
    pub fn from_spec(spec: EncoderSpec) -> Result<Self, EmbeddingError> {
        if spec.hidden_size == 0 || spec.vocab_size == 0 {
            return Err(EmbeddingError::EncoderLoad(format!(
                "encoder '{}' has zero hidden or vocab size",
                spec.name
            )));
        }
        if spec.max_tokens == 0 {
            return Err(EmbeddingError::EncoderLoad(format!(
                "encoder '{}' has max_tokens = 0",
                spec.name
            )));
        }
        let mut rng = SplitMix64::new(spec.seed);
        let scale = 1.0 / libm::sqrt(spec.hidden_size as f64);
        let table = crate::nn::uniform_init(&mut rng, spec.vocab_size * spec.hidden_size, scale);
        Ok(Self { spec, table })
    }

    /// Rebuild an encoder around an existing table (checkpoint restore).
    pub fn from_parts(spec: EncoderSpec, table: Vec<f64>) -> Result<Self, EmbeddingError> {
        if table.len() != spec.vocab_size * spec.hidden_size {
            return Err(EmbeddingError::EncoderLoad(format!(
                "table length {} does not match {} x {}",
                table.len(),
                spec.vocab_size,
                spec.hidden_size
            )));
        }
        Ok(Self { spec, table })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn hidden_size(&self) -> usize {
        self.spec.hidden_size
    }

    pub fn params(&self) -> &[f64] {
        &self.table
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.table
    }

    /// SHA-256 over the little-endian bytes of every parameter. Two encoders
    /// digest equal iff their tables are bit-identical.
    pub fn param_digest(&self) -> String {
        let mut hasher = Sha256::new();
        for v in &self.table {
            hasher.update(v.to_le_bytes());
        }
        hex(&hasher.finalize())
    }

    fn token_indices(&self, text: &str) -> Vec<usize> {
        text.split_whitespace()
            .take(self.spec.max_tokens)
            .map(|t| (fnv1a64(t.as_bytes()) % self.spec.vocab_size as u64) as usize)
            .collect()
    }

    /// Forward pass with the cache needed for backprop.
    pub fn forward(&self, text: &str) -> Result<(Vec<f64>, BagCache), EmbeddingError> {
        let indices = self.token_indices(text);
        if indices.is_empty() {
            return Err(EmbeddingError::Tokenization);
        }
        let h = self.spec.hidden_size;
        let mut out = vec![0.0; h];
        for &idx in &indices {
            let row = &self.table[idx * h..(idx + 1) * h];
            for (o, r) in out.iter_mut().zip(row) {
                *o += r;
            }
        }
        let inv = 1.0 / indices.len() as f64;
        for o in &mut out {
            *o *= inv;
        }
        Ok((out, BagCache { indices }))
    }

    /// Eval-mode encoding (no cache, no gradient).
    pub fn encode(&self, text: &str) -> Result<Vec<f64>, EmbeddingError> {
        Ok(self.forward(text)?.0)
    }

    /// Accumulate `d loss / d table` into `grads` given the upstream
    /// gradient w.r.t. the output embedding. `grads` spans the whole table.
    pub fn backward(&self, cache: &BagCache, upstream: &[f64], grads: &mut [f64]) {
        debug_assert_eq!(upstream.len(), self.spec.hidden_size);
        debug_assert_eq!(grads.len(), self.table.len());
        let h = self.spec.hidden_size;
        let inv = 1.0 / cache.indices.len() as f64;
        for &idx in &cache.indices {
            let row = &mut grads[idx * h..(idx + 1) * h];
            for (g, u) in row.iter_mut().zip(upstream) {
                *g += u * inv;
            }
        }
    }
}

/// Encode a cleaned post text with the text-side encoder.
pub fn encode_text(
    text: &str,
    encoder: &HashedBagEncoder,
) -> Result<EmbeddingVector, EmbeddingError> {
    Ok(EmbeddingVector::new(encoder.encode(text)?, Role::TextSide))
}

/// Render a [`FeatureSet`] as the single string fed to the feature encoder.
///
/// One serialized string with category markers keeps the whole set in a
/// single encoder pass while preserving which category each term came from.
/// The non-hateful set serializes to the literal `non-hateful`.
pub fn serialize_features(fs: &FeatureSet) -> String {
    if fs.non_hateful {
        return String::from("non-hateful");
    }
    let list = |xs: &[String], sep: &str| -> String {
        if xs.is_empty() {
            String::from("none")
        } else {
            xs.join(sep)
        }
    };
    format!(
        "rationales: {} | derogatory: {} | cuss words: {}",
        list(&fs.rationales, "; "),
        list(&fs.derogatory_language, ", "),
        list(&fs.cuss_words, ", ")
    )
}

/// Encode extracted features with the frozen feature-side encoder.
/// Refuses a trainable encoder: the feature side never participates in
/// gradient flow.
pub fn encode_features(
    fs: &FeatureSet,
    encoder: &HashedBagEncoder,
) -> Result<EmbeddingVector, EmbeddingError> {
    if encoder.spec().trainable {
        return Err(EmbeddingError::NotFrozen(encoder.spec().name.clone()));
    }
    let serialized = serialize_features(fs);
    Ok(EmbeddingVector::new(
        encoder.encode(&serialized)?,
        Role::FeatureSide,
    ))
}

/// Digest identifying a [`FeatureSet`] by its serialized feature text; used
/// to key the optional feature-embedding cache.
pub fn feature_set_digest(fs: &FeatureSet) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serialize_features(fs).as_bytes());
    hex(&hasher.finalize())
}
