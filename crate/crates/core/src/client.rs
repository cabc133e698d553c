//! Behavioral contract for the LLM used by feature extraction and the
//! one-shot baseline.
//!
//! Three implementations exist: a live HTTP client and a replay-fixture
//! client (both in `shield-cli`, since they need IO), and the fully
//! deterministic [`LexiconClient`] mock defined here, which lets the whole
//! pipeline run offline.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::string::String;

use crate::extraction::{self, FeatureCategory, FeatureSet};

/// Sampling parameters sent with every completion request.
///
/// Defaults: temperature 0.1, top_p 1.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub top_p: f64,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            top_p: 1.0,
        }
    }
}

/// Client-side request settings shared by all implementations.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClientConfig {
    pub model_id: String,
    pub decoding: DecodingParams,
    /// Request timeout in seconds (live client only).
    pub timeout_secs: u64,
    /// Transient transport failures are retried up to this many times.
    pub max_retries: u32,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            model_id: String::from("offline-mock"),
            decoding: DecodingParams::default(),
            timeout_secs: 30,
            max_retries: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClientError {
    /// Transport-level failure. Retryable; surfaced after retries are
    /// exhausted.
    #[error("transport error: {0}")]
    Transport(String),
    /// The client has no response for this input (replay client only).
    #[error("no recorded response for prompt: {0}")]
    UnknownInput(String),
}

/// A completion-style LLM. Implementations must be deterministic for
/// identical `(model, decoding params, prompt)` unless the backing service
/// itself is not.
pub trait LlmClient {
    fn config(&self) -> &ClientConfig;

    /// Send one prompt, return the raw model output verbatim.
    fn complete(&self, prompt: &str) -> Result<String, ClientError>;
}

/// Marker the feature-extraction template embeds; the mock keys on it to
/// decide which kind of reply to synthesize.
const FEATURE_MARKER: &str = "content moderation bot";
const ONESHOT_MARKER: &str = "hate speech detection bot";

/// Deterministic offline stand-in for the LLM, driven by a term lexicon.
///
/// For feature-extraction prompts it answers with the JSON a cooperative
/// model would produce for [`extraction::lexicon_extract`]; for one-shot
/// classification prompts it answers `"1"` when any lexicon term matches the
/// query text and `"0"` otherwise. Unrecognized prompts get a refusal string
/// so misuse is visible in tests.
#[derive(Debug)]
pub struct LexiconClient {
    config: ClientConfig,
    lexicon: BTreeMap<String, FeatureCategory>,
    calls: core::sync::atomic::AtomicU64,
}

impl LexiconClient {
    pub fn new(lexicon: BTreeMap<String, FeatureCategory>) -> Self {
        Self {
            config: ClientConfig::default(),
            lexicon,
            calls: core::sync::atomic::AtomicU64::new(0),
        }
    }

    pub fn with_config(mut self, config: ClientConfig) -> Self {
        self.config = config;
        self
    }

    /// Number of `complete` calls served so far. Lets tests verify the cache
    /// short-circuits repeat extractions.
    pub fn call_count(&self) -> u64 {
        self.calls.load(core::sync::atomic::Ordering::Relaxed)
    }

    /// The query payload is whatever follows the last `Text:` marker of our
    /// own templates, with the one-shot `Label:` suffix and quoting removed.
    fn query_text(prompt: &str) -> &str {
        let tail = match prompt.rfind("Text:") {
            Some(at) => &prompt[at + "Text:".len()..],
            None => prompt,
        };
        let tail = tail.trim_end();
        let tail = tail.strip_suffix("Label:").unwrap_or(tail);
        tail.trim().trim_matches('"').trim()
    }
}

impl LlmClient for LexiconClient {
    fn config(&self) -> &ClientConfig {
        &self.config
    }

    fn complete(&self, prompt: &str) -> Result<String, ClientError> {
        self.calls
            .fetch_add(1, core::sync::atomic::Ordering::Relaxed);
        let text = Self::query_text(prompt);
        if prompt.contains(ONESHOT_MARKER) {
            let fs = extraction::lexicon_extract(text, &self.lexicon)
                .map_err(|e| ClientError::Transport(alloc::format!("mock lexicon: {e}")))?;
            return Ok(if fs.non_hateful {
                "0".to_owned()
            } else {
                "1".to_owned()
            });
        }
        if prompt.contains(FEATURE_MARKER) {
            let fs = extraction::lexicon_extract(text, &self.lexicon)
                .map_err(|e| ClientError::Transport(alloc::format!("mock lexicon: {e}")))?;
            return Ok(feature_set_as_json(&fs));
        }
        Ok(String::from("I cannot help with that."))
    }
}

/// Render a [`FeatureSet`] the way a cooperative model following the
/// extraction prompt would: the bare word for the non-hateful case, a JSON
/// object with the three lists otherwise.
pub fn feature_set_as_json(fs: &FeatureSet) -> String {
    if fs.non_hateful {
        return String::from("non-hateful");
    }
    let obj = serde_json::json!({
        "rationales": fs.rationales,
        "derogatory_language": fs.derogatory_language,
        "cuss_words": fs.cuss_words,
    });
    serde_json::to_string(&obj).unwrap_or_default()
}

/// Convenience for tests and docs: build a lexicon from `(term, category)`
/// pairs.
pub fn lexicon_from_pairs(pairs: &[(&str, FeatureCategory)]) -> BTreeMap<String, FeatureCategory> {
    let mut out = BTreeMap::new();
    for (term, cat) in pairs {
        out.insert((*term).to_owned(), *cat);
    }
    out
}
