//! Agreement between LLM-extracted rationales and human-annotated rationale
//! spans: token normalization, overlap and cosine metrics, per-corpus
//! aggregation, and a self-contained HTML report that colors each token by
//! which side marked it.

use alloc::borrow::ToOwned;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::datasets::{Post, RationaleSpan};
use crate::embedding::{EmbeddingError, HashedBagEncoder};
use crate::extraction::FeatureSet;

/// Version stamp for the pinned stop-word list; recorded in reports so
/// metric runs stay comparable.
pub const STOP_WORDS_VERSION: &str = "english-v1";

/// The classic English stop-word list (apostrophes folded out, since
/// normalization strips punctuation before the stop-word check). Sorted;
/// lookups binary-search it.
pub static STOP_WORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "ain", "all", "am", "an", "and", "any",
    "are", "aren", "arent", "as", "at", "be", "because", "been", "before", "being", "below",
    "between", "both", "but", "by", "can", "couldn", "couldnt", "d", "did", "didn", "didnt", "do",
    "does", "doesn", "doesnt", "doing", "don", "dont", "down", "during", "each", "few", "for",
    "from", "further", "had", "hadn", "hadnt", "has", "hasn", "hasnt", "have", "haven", "havent",
    "having", "he", "her", "here", "hers", "herself", "him", "himself", "his", "how", "i", "if",
    "in", "into", "is", "isn", "isnt", "it", "its", "itself", "just", "ll", "m", "ma", "me",
    "mightn", "mightnt", "more", "most", "mustn", "mustnt", "my", "myself", "needn", "neednt",
    "no", "nor", "not", "now", "o", "of", "off", "on", "once", "only", "or", "other", "our",
    "ours", "ourselves", "out", "over", "own", "re", "s", "same", "shan", "shant", "she", "shes",
    "should", "shouldn", "shouldnt", "shouldve", "so", "some", "such", "t", "than", "that",
    "thatll", "the", "their", "theirs", "them", "themselves", "then", "there", "these", "they",
    "this", "those", "through", "to", "too", "under", "until", "up", "ve", "very", "was", "wasn",
    "wasnt", "we", "were", "weren", "werent", "what", "when", "where", "which", "while", "who",
    "whom", "why", "will", "with", "won", "wont", "wouldn", "wouldnt", "y", "you", "youd",
    "youll", "your", "youre", "yours", "yourself", "yourselves", "youve",
];

fn is_stop_word(token: &str) -> bool {
    STOP_WORDS.binary_search(&token).is_ok()
}

/// Which side produced a token set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Llm,
    Human,
}

/// Normalized, deduplicated tokens from one side. Every member is
/// lowercase, punctuation-free, non-empty, and not a stop word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSet {
    pub tokens: BTreeSet<String>,
    pub source: Source,
}

impl TokenSet {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Canonical single-string form: sorted tokens joined by spaces. This is
    /// the text handed to the encoder for the cosine metric.
    pub fn joined(&self) -> String {
        let mut out = String::new();
        for token in &self.tokens {
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(token);
        }
        out
    }
}

/// Lowercase a token and drop every non-alphanumeric character (lowercasing
/// first, since some uppercase letters lower to a letter plus a combining
/// mark). Returns `None` when nothing survives or the survivor is a stop
/// word.
pub fn normalize_token(raw: &str) -> Option<String> {
    let cleaned: String = raw
        .chars()
        .flat_map(char::to_lowercase)
        .filter(|c| c.is_alphanumeric())
        .collect();
    if cleaned.is_empty() || is_stop_word(&cleaned) {
        None
    } else {
        Some(cleaned)
    }
}

/// Normalize free text (or any joined phrase list) into a [`TokenSet`].
pub fn normalize_tokens(text: &str, source: Source) -> TokenSet {
    let tokens = text
        .split_whitespace()
        .filter_map(normalize_token)
        .collect();
    TokenSet { tokens, source }
}

/// Normalize the tokens covered by human rationale spans.
pub fn normalize_spans(spans: &[RationaleSpan], source: Source) -> TokenSet {
    let tokens = spans
        .iter()
        .flat_map(|s| s.tokens.iter())
        .filter_map(|t| normalize_token(t))
        .collect();
    TokenSet { tokens, source }
}

/// The LLM side of one post: the union of all three feature categories.
pub fn llm_token_set(fs: &FeatureSet) -> TokenSet {
    let tokens = fs
        .all_terms()
        .flat_map(str::split_whitespace)
        .filter_map(normalize_token)
        .collect();
    TokenSet {
        tokens,
        source: Source::Llm,
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AlignmentError {
    #[error("both token sets must be non-empty")]
    EmptyInput,
    #[error("extracted features and human-annotated posts share no ids")]
    EmptyIntersection,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// Overlap coefficient `|a ∩ b| / min(|a|, |b|)`. Symmetric; 1 whenever one
/// set contains the other.
pub fn overlap_similarity(a: &TokenSet, b: &TokenSet) -> Result<f64, AlignmentError> {
    if a.is_empty() || b.is_empty() {
        return Err(AlignmentError::EmptyInput);
    }
    let common = a.tokens.intersection(&b.tokens).count();
    Ok(common as f64 / a.len().min(b.len()) as f64)
}

/// Jaccard index `|a ∩ b| / |a ∪ b|`, exposed as a secondary comparison
/// metric alongside the overlap coefficient.
pub fn jaccard_similarity(a: &TokenSet, b: &TokenSet) -> Result<f64, AlignmentError> {
    if a.is_empty() || b.is_empty() {
        return Err(AlignmentError::EmptyInput);
    }
    let common = a.tokens.intersection(&b.tokens).count();
    let union = a.len() + b.len() - common;
    Ok(common as f64 / union as f64)
}

/// Cosine similarity of the two texts' frozen-encoder embeddings.
pub fn semantic_similarity(
    a_text: &str,
    b_text: &str,
    encoder: &HashedBagEncoder,
) -> Result<f64, AlignmentError> {
    if a_text.trim().is_empty() || b_text.trim().is_empty() {
        return Err(AlignmentError::EmptyInput);
    }
    if encoder.spec().trainable {
        return Err(AlignmentError::Embedding(EmbeddingError::NotFrozen(
            encoder.spec().name.clone(),
        )));
    }
    let a = encoder.encode(a_text)?;
    let b = encoder.encode(b_text)?;
    Ok(cosine(&a, &b))
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (libm::sqrt(na) * libm::sqrt(nb))
}

/// Scores for one evaluated post.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ExampleAlignment {
    pub post_id: String,
    pub overlap: f64,
    pub cosine: f64,
}

/// Corpus-level alignment: per-example scores plus their arithmetic means.
/// Posts where either side is empty after normalization are skipped and
/// counted, never scored as zero.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AlignmentResult {
    pub per_example: Vec<ExampleAlignment>,
    pub aggregate_overlap: Option<f64>,
    pub aggregate_cosine: Option<f64>,
    pub n_evaluated: usize,
    pub n_skipped: usize,
    pub stop_words_version: String,
}

/// Score every post that has both an extraction and human rationale
/// annotations. `encoder` must be the frozen feature-side encoder.
pub fn align_corpus(
    extracted: &BTreeMap<String, FeatureSet>,
    posts: &[Post],
    encoder: &HashedBagEncoder,
) -> Result<AlignmentResult, AlignmentError> {
    let shared: Vec<&Post> = posts.iter().filter(|p| extracted.contains_key(&p.id)).collect();
    if shared.is_empty() {
        return Err(AlignmentError::EmptyIntersection);
    }

    let mut result = AlignmentResult {
        per_example: Vec::new(),
        aggregate_overlap: None,
        aggregate_cosine: None,
        n_evaluated: 0,
        n_skipped: 0,
        stop_words_version: STOP_WORDS_VERSION.to_owned(),
    };

    for post in shared {
        let llm = llm_token_set(&extracted[&post.id]);
        let human = normalize_spans(
            post.human_rationales.as_deref().unwrap_or(&[]),
            Source::Human,
        );
        if llm.is_empty() || human.is_empty() {
            result.n_skipped += 1;
            continue;
        }
        let overlap = overlap_similarity(&llm, &human)?;
        let cosine = semantic_similarity(&llm.joined(), &human.joined(), encoder)?;
        result.per_example.push(ExampleAlignment {
            post_id: post.id.clone(),
            overlap,
            cosine,
        });
        result.n_evaluated += 1;
    }

    if result.n_evaluated > 0 {
        let n = result.n_evaluated as f64;
        result.aggregate_overlap =
            Some(result.per_example.iter().map(|e| e.overlap).sum::<f64>() / n);
        result.aggregate_cosine =
            Some(result.per_example.iter().map(|e| e.cosine).sum::<f64>() / n);
    }
    Ok(result)
}

fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

fn fmt_opt(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{v:.4}"),
        None => String::from("n/a"),
    }
}

/// Render the corpus as a standalone HTML document. Per post, each surface
/// token is wrapped in a span classed by which side marked its normalized
/// form: `llm` (blue), `human` (red), `both` (purple), or left bare. The
/// aggregate table sits at the top; styles are inline so the file has no
/// network dependencies.
pub fn render_overlap_report(
    posts: &[Post],
    extracted: &BTreeMap<String, FeatureSet>,
    result: &AlignmentResult,
) -> String {
    let scores: BTreeMap<&str, (f64, f64)> = result
        .per_example
        .iter()
        .map(|e| (e.post_id.as_str(), (e.overlap, e.cosine)))
        .collect();

    let mut html = String::new();
    html.push_str(
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n\
         <title>Rationale overlap report</title>\n<style>\n\
         body { font-family: sans-serif; margin: 2em; }\n\
         table { border-collapse: collapse; margin-bottom: 1.5em; }\n\
         td, th { border: 1px solid #999; padding: 4px 10px; text-align: left; }\n\
         .llm { color: #1f4fd8; font-weight: bold; }\n\
         .human { color: #c22121; font-weight: bold; }\n\
         .both { color: #8c1fd8; font-weight: bold; }\n\
         .post { margin-bottom: 1.2em; padding: 0.6em; border: 1px solid #ddd; }\n\
         .skipped { color: #777; font-style: italic; }\n\
         </style>\n</head>\n<body>\n<h1>Rationale overlap report</h1>\n",
    );

    html.push_str("<table>\n<tr><th>posts evaluated</th><th>posts skipped</th><th>mean overlap</th><th>mean cosine</th><th>stop words</th></tr>\n");
    html.push_str(&format!(
        "<tr><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td></tr>\n</table>\n",
        result.n_evaluated,
        result.n_skipped,
        fmt_opt(result.aggregate_overlap),
        fmt_opt(result.aggregate_cosine),
        escape_html(&result.stop_words_version),
    ));
    html.push_str(
        "<p>Legend: <span class=\"llm\">model only</span>, \
         <span class=\"human\">human only</span>, \
         <span class=\"both\">both</span>.</p>\n",
    );

    for post in posts {
        let Some(fs) = extracted.get(&post.id) else {
            continue;
        };
        let llm = llm_token_set(fs);
        let human = normalize_spans(
            post.human_rationales.as_deref().unwrap_or(&[]),
            Source::Human,
        );
        html.push_str(&format!(
            "<div class=\"post\" id=\"{}\">\n<h2>{}</h2>\n<p>",
            escape_html(&post.id),
            escape_html(&post.id)
        ));
        let mut first = true;
        for surface in post.text.split_whitespace() {
            if !first {
                html.push(' ');
            }
            first = false;
            let class = match normalize_token(surface) {
                Some(tok) => match (llm.tokens.contains(&tok), human.tokens.contains(&tok)) {
                    (true, true) => Some("both"),
                    (true, false) => Some("llm"),
                    (false, true) => Some("human"),
                    (false, false) => None,
                },
                None => None,
            };
            match class {
                Some(class) => html.push_str(&format!(
                    "<span class=\"{class}\">{}</span>",
                    escape_html(surface)
                )),
                None => html.push_str(&escape_html(surface)),
            }
        }
        html.push_str("</p>\n");
        match scores.get(post.id.as_str()) {
            Some((overlap, cosine)) => html.push_str(&format!(
                "<p>overlap {overlap:.4}, cosine {cosine:.4}</p>\n"
            )),
            None => html.push_str("<p class=\"skipped\">skipped: one side empty</p>\n"),
        }
        html.push_str("</div>\n");
    }

    html.push_str("</body>\n</html>\n");
    html
}
