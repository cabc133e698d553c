//! Post corpus primitives: cleaning, stratified splitting, summary
//! statistics, and conversion of per-token rationale masks into spans.
//!
//! File loaders (JSONL, CSV, and the annotated-rationale JSON shape) live in
//! `shield-cli`; everything here is pure.

use alloc::borrow::ToOwned;
use alloc::string::String;
use alloc::vec::Vec;

use crate::rng::SplitMix64;

/// Source platform of a post.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Platform {
    Gab,
    Reddit,
    Twitter,
    Youtube,
    ImplicitHs,
    Other,
}

/// A contiguous human-annotated rationale, in token coordinates.
/// `token_end` is exclusive; `tokens` holds the covered surface tokens.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RationaleSpan {
    pub token_start: usize,
    pub token_end: usize,
    pub tokens: Vec<String>,
}

impl RationaleSpan {
    /// Build a span over `post_tokens`, copying the covered tokens.
    pub fn new(
        token_start: usize,
        token_end: usize,
        post_tokens: &[String],
    ) -> Result<Self, DatasetError> {
        if token_start >= token_end || token_end > post_tokens.len() {
            return Err(DatasetError::InvalidSpan {
                start: token_start,
                end: token_end,
                n_tokens: post_tokens.len(),
            });
        }
        Ok(Self {
            token_start,
            token_end,
            tokens: post_tokens[token_start..token_end].to_vec(),
        })
    }
}

/// One labeled social-media text, optionally carrying human rationale spans.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Post {
    pub id: String,
    pub text: String,
    /// 0 non-hateful, 1 hateful.
    pub label: u8,
    pub platform: Platform,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_rationales: Option<Vec<RationaleSpan>>,
}

impl Post {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        label: u8,
        platform: Platform,
    ) -> Result<Self, DatasetError> {
        if label > 1 {
            return Err(DatasetError::InvalidLabel(label));
        }
        Ok(Self {
            id: id.into(),
            text: text.into(),
            label,
            platform,
            human_rationales: None,
        })
    }

    pub fn with_rationales(mut self, spans: Vec<RationaleSpan>) -> Self {
        self.human_rationales = Some(spans);
        self
    }

    /// Whitespace tokens of the post text.
    pub fn tokens(&self) -> Vec<String> {
        self.text.split_whitespace().map(ToOwned::to_owned).collect()
    }
}

/// Corpus summary: counts and the hateful percentage rounded to one decimal.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DatasetStats {
    pub n_posts: usize,
    pub n_hateful: usize,
    pub hate_pct: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DatasetError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("split ratios must be positive and sum to 1 (sum was {sum})")]
    InvalidRatios { sum: f64 },
    #[error("invalid label {0}, expected 0 or 1")]
    InvalidLabel(u8),
    #[error("invalid rationale span [{start}, {end}) over {n_tokens} tokens")]
    InvalidSpan {
        start: usize,
        end: usize,
        n_tokens: usize,
    },
    #[error("rationale mask has {got} entries but the post has {expected} tokens")]
    MaskLength { expected: usize, got: usize },
}

/// Conventional social-media cleaning: lowercase, URLs to `<url>`,
/// @-mentions to `<user>`, whitespace runs collapsed, edges trimmed.
/// Idempotent.
pub fn preprocess_text(text: &str) -> String {
    let mut out = String::new();
    for token in text.split_whitespace() {
        let lowered = token.to_lowercase();
        let mapped: &str = if lowered.starts_with("http://")
            || lowered.starts_with("https://")
            || lowered.starts_with("www.")
        {
            "<url>"
        } else if token.starts_with('@') && token.chars().count() > 1 {
            "<user>"
        } else {
            &lowered
        };
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(mapped);
    }
    out
}

/// The three parts of a stratified split.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Post>,
    pub val: Vec<Post>,
    pub test: Vec<Post>,
}

/// Stratified train/val/test split, deterministic for a fixed seed.
///
/// Within each label group the posts are shuffled and allocated by
/// cumulative rounding, so the three parts partition the input exactly and
/// per-label proportions track the corpus.
pub fn split_dataset(
    posts: Vec<Post>,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetSplit, DatasetError> {
    let (r_train, r_val, r_test) = ratios;
    let sum = r_train + r_val + r_test;
    if r_train <= 0.0 || r_val <= 0.0 || r_test <= 0.0 || libm::fabs(sum - 1.0) > 1e-9 {
        return Err(DatasetError::InvalidRatios { sum });
    }

    // Destinations: 0 train, 1 val, 2 test.
    let mut assignment: Vec<u8> = alloc::vec![0; posts.len()];
    let mut rng = SplitMix64::new(seed);
    for label in [0u8, 1u8] {
        let mut group: Vec<usize> = posts
            .iter()
            .enumerate()
            .filter(|(_, p)| p.label == label)
            .map(|(i, _)| i)
            .collect();
        rng.shuffle(&mut group);
        let n = group.len() as f64;
        let cut_train = libm::round(r_train * n) as usize;
        let cut_val = (libm::round((r_train + r_val) * n) as usize).max(cut_train);
        for (pos, &idx) in group.iter().enumerate() {
            assignment[idx] = if pos < cut_train {
                0
            } else if pos < cut_val.min(group.len()) {
                1
            } else {
                2
            };
        }
    }

    let mut split = DatasetSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (post, dest) in posts.into_iter().zip(assignment) {
        match dest {
            0 => split.train.push(post),
            1 => split.val.push(post),
            _ => split.test.push(post),
        }
    }
    Ok(split)
}

/// Counts and hateful percentage for a corpus.
pub fn dataset_stats(posts: &[Post]) -> Result<DatasetStats, DatasetError> {
    if posts.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let n_posts = posts.len();
    let n_hateful = posts.iter().filter(|p| p.label == 1).count();
    Ok(DatasetStats {
        n_posts,
        n_hateful,
        hate_pct: round_one_decimal(100.0 * n_hateful as f64 / n_posts as f64),
    })
}

pub fn round_one_decimal(x: f64) -> f64 {
    libm::round(x * 10.0) / 10.0
}

/// Majority threshold for keeping a token as rationale: at least 2 of the 3
/// annotators must have marked it.
pub const RATIONALE_VOTE_THRESHOLD: usize = 2;

/// Aggregate per-annotator token masks by majority vote and convert the
/// surviving tokens into contiguous [`RationaleSpan`]s.
pub fn spans_from_votes(
    masks: &[Vec<u8>],
    post_tokens: &[String],
    min_votes: usize,
) -> Result<Vec<RationaleSpan>, DatasetError> {
    for mask in masks {
        if mask.len() != post_tokens.len() {
            return Err(DatasetError::MaskLength {
                expected: post_tokens.len(),
                got: mask.len(),
            });
        }
    }
    let mut spans = Vec::new();
    let mut run_start: Option<usize> = None;
    for i in 0..post_tokens.len() {
        let votes = masks.iter().filter(|m| m[i] != 0).count();
        if votes >= min_votes {
            run_start.get_or_insert(i);
        } else if let Some(start) = run_start.take() {
            spans.push(RationaleSpan::new(start, i, post_tokens)?);
        }
    }
    if let Some(start) = run_start {
        spans.push(RationaleSpan::new(start, post_tokens.len(), post_tokens)?);
    }
    Ok(spans)
}
