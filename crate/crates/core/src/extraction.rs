//! Feature extraction: prompting an LLM for rationales, derogatory language,
//! and cuss words, and parsing whatever comes back into a [`FeatureSet`].
//!
//! The parser is total: any input string yields either a `FeatureSet` or a
//! [`ParseError`], never a panic. Model output in the wild drifts — prose
//! around the JSON, scalar values where lists were requested, key aliases —
//! so recovery is layered before giving up.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

use crate::client::DecodingParams;

/// Which category a lexicon term belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureCategory {
    Derogatory,
    Cuss,
}

/// Structured features extracted from one post.
///
/// Invariants: `non_hateful == true` implies all three lists are empty;
/// every list element is non-empty with surrounding whitespace stripped;
/// `raw_response` is preserved byte-exact for audit.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FeatureSet {
    pub rationales: Vec<String>,
    pub derogatory_language: Vec<String>,
    pub cuss_words: Vec<String>,
    pub non_hateful: bool,
    #[serde(default)]
    pub raw_response: String,
    #[serde(default)]
    pub prompt_version: String,
    #[serde(default)]
    pub model_id: String,
}

impl FeatureSet {
    /// Build from the three category lists, trimming entries and dropping
    /// empties. A set where every list ends up empty means the model found
    /// nothing hateful, so it canonicalizes to the non-hateful form.
    pub fn from_lists(
        rationales: Vec<String>,
        derogatory_language: Vec<String>,
        cuss_words: Vec<String>,
    ) -> Self {
        let clean = |xs: Vec<String>| -> Vec<String> {
            xs.into_iter()
                .map(|s| s.trim().to_owned())
                .filter(|s| !s.is_empty())
                .collect()
        };
        let rationales = clean(rationales);
        let derogatory_language = clean(derogatory_language);
        let cuss_words = clean(cuss_words);
        let non_hateful =
            rationales.is_empty() && derogatory_language.is_empty() && cuss_words.is_empty();
        Self {
            rationales,
            derogatory_language,
            cuss_words,
            non_hateful,
            raw_response: String::new(),
            prompt_version: String::new(),
            model_id: String::new(),
        }
    }

    /// The empty set for a post the model judged non-hateful.
    pub fn non_hateful() -> Self {
        Self::from_lists(Vec::new(), Vec::new(), Vec::new())
    }

    pub fn with_raw_response(mut self, raw: impl Into<String>) -> Self {
        self.raw_response = raw.into();
        self
    }

    pub fn with_provenance(
        mut self,
        model_id: impl Into<String>,
        prompt_version: impl Into<String>,
    ) -> Self {
        self.model_id = model_id.into();
        self.prompt_version = prompt_version.into();
        self
    }

    /// All extracted terms across the three categories, in category order.
    pub fn all_terms(&self) -> impl Iterator<Item = &str> {
        self.rationales
            .iter()
            .chain(self.derogatory_language.iter())
            .chain(self.cuss_words.iter())
            .map(String::as_str)
    }
}

/// Versioned feature-extraction prompt templates. Adding a version is an
/// explicit, enumerated act so cache keys never silently alias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PromptVersion {
    #[serde(rename = "v1")]
    V1,
}

impl PromptVersion {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptVersion::V1 => "v1",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "v1" => Some(PromptVersion::V1),
            _ => None,
        }
    }
}

/// The v1 extraction instruction. The wording is load-bearing: recorded
/// fixtures and cache keys depend on it byte-for-byte, so never edit it —
/// add a new version instead.
pub const FEATURE_INSTRUCTION_V1: &str = "You are a content moderation bot. Identify the list of rationales, list of derogatory language, list of cuss words that promote a hateful sentiment and respond with non-hateful if there are none. Note: The output should be in a json format.";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExtractionError {
    #[error("input text is empty")]
    EmptyInput,
    #[error("lexicon is empty")]
    EmptyLexicon,
}

/// Why a model reply could not be interpreted as a [`FeatureSet`].
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("empty response")]
    Empty,
    #[error("response is not interpretable as a feature set: {0}")]
    Unrecognized(String),
}

/// Substitute `text` into the versioned extraction template.
pub fn build_feature_prompt(text: &str, version: PromptVersion) -> Result<String, ExtractionError> {
    if text.trim().is_empty() {
        return Err(ExtractionError::EmptyInput);
    }
    match version {
        PromptVersion::V1 => Ok(format!("{FEATURE_INSTRUCTION_V1}\nText: {text}")),
    }
}

/// Parse a raw model reply into a [`FeatureSet`].
///
/// Accepted forms, tried in order:
/// 1. the bare answer `non-hateful` (any casing, optionally wrapped in
///    quotes, backticks, or trailing punctuation, or as a JSON string);
/// 2. a JSON object with keys for the three categories — key matching is
///    case-insensitive and tolerant of space/`-`/`_` variants, with the
///    alias sets {rationales, rationale}, {derogatory_language, derogatory},
///    {cuss_words, profanity}; scalar values are promoted to one-element
///    lists;
/// 3. the same object recovered from surrounding prose by locating the
///    outermost balanced `{…}`.
pub fn parse_feature_response(raw: &str) -> Result<FeatureSet, ParseError> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(ParseError::Empty);
    }
    if is_non_hateful_answer(trimmed) {
        return Ok(FeatureSet::non_hateful().with_raw_response(raw));
    }
    for candidate in json_candidates(trimmed) {
        if let Ok(value) = serde_json::from_str::<serde_json::Value>(candidate) {
            if let Some(fs) = feature_set_from_value(&value) {
                return Ok(fs.with_raw_response(raw));
            }
        }
    }
    let preview: String = trimmed.chars().take(60).collect();
    Err(ParseError::Unrecognized(preview))
}

/// True when the reply, stripped of quoting and trailing punctuation, is the
/// literal non-hateful answer the prompt asks for.
fn is_non_hateful_answer(s: &str) -> bool {
    let stripped: String = s
        .trim_matches(|c: char| {
            c.is_whitespace() || matches!(c, '"' | '\'' | '`' | '.' | '!' | ':')
        })
        .to_lowercase();
    matches!(stripped.as_str(), "non-hateful" | "non hateful" | "nonhateful")
}

/// Candidate JSON slices to attempt, most specific first: the whole reply,
/// then the outermost balanced object embedded in prose.
fn json_candidates(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    out.push(s);
    if let Some(obj) = balanced_object(s) {
        if obj != s {
            out.push(obj);
        }
    }
    out
}

/// Locate the outermost balanced `{…}` in `s`, honoring JSON string and
/// escape rules so braces inside string values do not confuse the depth
/// count. Returns `None` when no balanced object exists (e.g. truncated
/// output).
fn balanced_object(s: &str) -> Option<&str> {
    let start = s.find('{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in s[start..].char_indices() {
        if escaped {
            escaped = false;
            continue;
        }
        match c {
            '\\' if in_string => escaped = true,
            '"' => in_string = !in_string,
            _ if in_string => {}
            '{' => depth += 1,
            '}' => {
                depth = depth.saturating_sub(1);
                if depth == 0 {
                    return Some(&s[start..start + i + c.len_utf8()]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Lowercase and fold separators so `"Cuss Words"`, `"cuss-words"`, and
/// `"cuss_words"` all compare equal.
fn normalize_key(key: &str) -> String {
    key.trim()
        .chars()
        .map(|c| match c {
            ' ' | '-' => '_',
            c => c.to_ascii_lowercase(),
        })
        .collect()
}

fn strings_from_value(v: &serde_json::Value) -> Vec<String> {
    match v {
        serde_json::Value::Null => Vec::new(),
        serde_json::Value::String(s) => alloc::vec![s.clone()],
        serde_json::Value::Bool(b) => alloc::vec![b.to_string()],
        serde_json::Value::Number(n) => alloc::vec![n.to_string()],
        serde_json::Value::Array(xs) => xs
            .iter()
            .filter_map(|x| match x {
                serde_json::Value::String(s) => Some(s.clone()),
                serde_json::Value::Number(n) => Some(n.to_string()),
                serde_json::Value::Bool(b) => Some(b.to_string()),
                _ => None,
            })
            .collect(),
        serde_json::Value::Object(_) => Vec::new(),
    }
}

fn feature_set_from_value(value: &serde_json::Value) -> Option<FeatureSet> {
    match value {
        serde_json::Value::String(s) => {
            is_non_hateful_answer(s).then(FeatureSet::non_hateful)
        }
        serde_json::Value::Object(map) => {
            let mut rationales = Vec::new();
            let mut derogatory = Vec::new();
            let mut cuss = Vec::new();
            let mut recognized = false;
            for (key, v) in map {
                match normalize_key(key).as_str() {
                    "rationales" | "rationale" => {
                        recognized = true;
                        rationales.extend(strings_from_value(v));
                    }
                    "derogatory_language" | "derogatory" => {
                        recognized = true;
                        derogatory.extend(strings_from_value(v));
                    }
                    "cuss_words" | "profanity" => {
                        recognized = true;
                        cuss.extend(strings_from_value(v));
                    }
                    _ => {}
                }
            }
            recognized.then(|| FeatureSet::from_lists(rationales, derogatory, cuss))
        }
        _ => None,
    }
}

/// Deterministic offline extractor: case-insensitive whole-token matching of
/// lexicon terms against the text. Matched terms go to their category list,
/// every sentence containing a match becomes a rationale, and a text with no
/// matches is non-hateful.
pub fn lexicon_extract(
    text: &str,
    lexicon: &BTreeMap<String, FeatureCategory>,
) -> Result<FeatureSet, ExtractionError> {
    if lexicon.is_empty() {
        return Err(ExtractionError::EmptyLexicon);
    }
    let lowered: BTreeMap<String, FeatureCategory> = lexicon
        .iter()
        .map(|(k, v)| (k.to_lowercase(), *v))
        .collect();

    let mut derogatory: Vec<String> = Vec::new();
    let mut cuss: Vec<String> = Vec::new();
    let mut rationales: Vec<String> = Vec::new();

    for sentence in split_sentences(text) {
        let mut sentence_matched = false;
        for raw_token in sentence.split_whitespace() {
            let token = raw_token.trim_matches(|c: char| !c.is_alphanumeric());
            if token.is_empty() {
                continue;
            }
            if let Some(category) = lowered.get(&token.to_lowercase()) {
                sentence_matched = true;
                let target = match category {
                    FeatureCategory::Derogatory => &mut derogatory,
                    FeatureCategory::Cuss => &mut cuss,
                };
                if !target.iter().any(|t| t == token) {
                    target.push(token.to_owned());
                }
            }
        }
        if sentence_matched {
            let surface = sentence.trim();
            if !surface.is_empty() && !rationales.iter().any(|r| r == surface) {
                rationales.push(surface.to_owned());
            }
        }
    }

    Ok(FeatureSet::from_lists(rationales, derogatory, cuss))
}

/// Sentence boundaries for the lexicon extractor: split after `.`, `!`, `?`.
fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, c) in text.char_indices() {
        if matches!(c, '.' | '!' | '?') {
            let end = i + c.len_utf8();
            if start < end {
                out.push(&text[start..end]);
            }
            start = end;
        }
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

/// Cache key for one extraction call: a SHA-256 digest over the model id,
/// prompt version, decoding parameters, and the trimmed, NFC-normalized
/// input text. Any differing input yields a different key (up to digest
/// collision); normalization is deliberately minimal so genuinely distinct
/// texts never alias.
pub fn cache_key(
    model_id: &str,
    prompt_version: PromptVersion,
    decoding: &DecodingParams,
    text: &str,
) -> String {
    let normalized: String = text.trim().nfc().collect();
    let mut hasher = Sha256::new();
    hasher.update(model_id.as_bytes());
    hasher.update([0u8]);
    hasher.update(prompt_version.as_str().as_bytes());
    hasher.update([0u8]);
    hasher.update(format!("{}", decoding.temperature).as_bytes());
    hasher.update([0u8]);
    hasher.update(format!("{}", decoding.top_p).as_bytes());
    hasher.update([0u8]);
    hasher.update(normalized.as_bytes());
    hex(&hasher.finalize())
}

/// Lowercase hex encoding.
pub fn hex(bytes: &[u8]) -> String {
    const TABLE: &[u8; 16] = b"0123456789abcdef";
    let mut out = String::with_capacity(bytes.len() * 2);
    for &b in bytes {
        out.push(TABLE[(b >> 4) as usize] as char);
        out.push(TABLE[(b & 0x0f) as usize] as char);
    }
    out
}
