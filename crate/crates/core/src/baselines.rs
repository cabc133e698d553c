//! One-shot LLM classification baseline: prompt with a single labeled
//! exemplar, parse a bare {0, 1} label out of the reply, and score accuracy.
//!
//! The label parser never guesses: a reply yields a label only when it
//! contains standalone occurrences of exactly one of the two digits;
//! anything else is an abstention, counted separately.

use alloc::string::String;
use alloc::vec::Vec;

use crate::client::{ClientError, LlmClient};
use crate::datasets::Post;

/// The v1 one-shot instruction. Byte-stable per version; recorded fixtures
/// depend on it.
pub const ONESHOT_INSTRUCTION_V1: &str = "You are a hate speech detection bot. Given a text, respond with the classification label towards given text with either hateful labeled as 1 or non-hateful labeled as 0. Note: It is essential to give classification for all the texts.";

/// Versioned one-shot prompt templates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum OneShotVersion {
    #[serde(rename = "v1")]
    V1,
}

impl OneShotVersion {
    pub fn as_str(self) -> &'static str {
        match self {
            OneShotVersion::V1 => "v1",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "v1" => Some(OneShotVersion::V1),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BaselineError {
    #[error("query text and exemplar text must be non-empty")]
    EmptyInput,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Client(#[from] ClientError),
}

/// Instruction, one labeled exemplar, then the query text.
pub fn build_oneshot_prompt(
    text: &str,
    exemplar: (&str, u8),
    version: OneShotVersion,
) -> Result<String, BaselineError> {
    let (exemplar_text, exemplar_label) = exemplar;
    if text.trim().is_empty() || exemplar_text.trim().is_empty() {
        return Err(BaselineError::EmptyInput);
    }
    match version {
        OneShotVersion::V1 => Ok(alloc::format!(
            "{ONESHOT_INSTRUCTION_V1}\nText: \"{exemplar_text}\"\nLabel: {}\nText: \"{text}\"\nLabel:",
            exemplar_label.min(1)
        )),
    }
}

/// Extract the label from a model reply, or `None` to abstain.
///
/// A standalone digit is a whitespace-delimited piece that equals `0` or `1`
/// after trimming punctuation off its edges (so `"1."` counts, `"10"` and
/// `"0.5"` do not). The reply parses only when exactly one of the two digits
/// occurs; seeing both, or neither, abstains.
pub fn parse_oneshot_label(reply: &str) -> Option<u8> {
    let mut saw_zero = false;
    let mut saw_one = false;
    for piece in reply.split_whitespace() {
        let trimmed = piece.trim_matches(|c: char| !c.is_alphanumeric());
        match trimmed {
            "0" => saw_zero = true,
            "1" => saw_one = true,
            _ => {}
        }
    }
    match (saw_zero, saw_one) {
        (true, false) => Some(0),
        (false, true) => Some(1),
        _ => None,
    }
}

/// Outcome of one one-shot classification call.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct OneShotResult {
    pub post_id: String,
    pub raw_response: String,
    /// Parsed label, or `None` when the model abstained.
    pub label: Option<u8>,
    /// Wall-clock latency in milliseconds, filled by callers that have a
    /// clock; 0 otherwise.
    #[serde(default)]
    pub latency_ms: u64,
}

/// Prompt the client for one post and parse the reply.
pub fn classify_oneshot(
    post_id: &str,
    text: &str,
    exemplar: (&str, u8),
    version: OneShotVersion,
    client: &dyn LlmClient,
) -> Result<OneShotResult, BaselineError> {
    let prompt = build_oneshot_prompt(text, exemplar, version)?;
    let raw = client.complete(&prompt)?;
    let label = parse_oneshot_label(&raw);
    Ok(OneShotResult {
        post_id: String::from(post_id),
        raw_response: raw,
        label,
        latency_ms: 0,
    })
}

/// Accuracy summary over a batch of one-shot results.
///
/// Lenient accuracy scores only the replies that parsed (undefined when all
/// abstained); strict accuracy counts every abstention as wrong.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OneShotSummary {
    pub n_posts: usize,
    pub n_parsed: usize,
    pub n_abstained: usize,
    pub n_correct: usize,
    pub abstain_rate: f64,
    pub accuracy_lenient: Option<f64>,
    pub accuracy_strict: f64,
}

/// Score parsed results against gold labels, by post order.
pub fn score_oneshot(results: &[OneShotResult], posts: &[Post]) -> Result<OneShotSummary, BaselineError> {
    if posts.is_empty() {
        return Err(BaselineError::EmptyDataset);
    }
    debug_assert_eq!(results.len(), posts.len());
    let mut n_correct = 0usize;
    let mut n_parsed = 0usize;
    for (result, post) in results.iter().zip(posts) {
        if let Some(label) = result.label {
            n_parsed += 1;
            if label == post.label {
                n_correct += 1;
            }
        }
    }
    let n_posts = posts.len();
    let n_abstained = n_posts - n_parsed;
    Ok(OneShotSummary {
        n_posts,
        n_parsed,
        n_abstained,
        n_correct,
        abstain_rate: n_abstained as f64 / n_posts as f64,
        accuracy_lenient: (n_parsed > 0).then(|| n_correct as f64 / n_parsed as f64),
        accuracy_strict: n_correct as f64 / n_posts as f64,
    })
}

/// Run the full baseline sequentially: one client call per post, results in
/// post order, then score.
pub fn evaluate_oneshot(
    posts: &[Post],
    exemplar: (&str, u8),
    version: OneShotVersion,
    client: &dyn LlmClient,
) -> Result<(Vec<OneShotResult>, OneShotSummary), BaselineError> {
    if posts.is_empty() {
        return Err(BaselineError::EmptyDataset);
    }
    let mut results = Vec::with_capacity(posts.len());
    for post in posts {
        results.push(classify_oneshot(
            &post.id, &post.text, exemplar, version, client,
        )?);
    }
    let summary = score_oneshot(&results, posts)?;
    Ok((results, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::{lexicon_from_pairs, LexiconClient};
    use crate::datasets::Platform;
    use crate::extraction::FeatureCategory;
    use alloc::format;
    use alloc::string::ToString;

    const TABLE2_TEXT: &str = "always thought it astounding no policing agency dares do this to the armed muslim compounds all over the country";

    #[test]
    fn prompt_contains_instruction_verbatim() {
        let prompt =
            build_oneshot_prompt(TABLE2_TEXT, ("an example post", 1), OneShotVersion::V1).unwrap();
        assert!(prompt.contains(ONESHOT_INSTRUCTION_V1));
        assert!(prompt.contains(TABLE2_TEXT));
    }

    #[test]
    fn prompt_is_byte_stable() {
        let a = build_oneshot_prompt("q", ("e", 0), OneShotVersion::V1).unwrap();
        let b = build_oneshot_prompt("q", ("e", 0), OneShotVersion::V1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert_eq!(
            build_oneshot_prompt("q", ("  ", 0), OneShotVersion::V1),
            Err(BaselineError::EmptyInput)
        );
        assert_eq!(
            build_oneshot_prompt("", ("e", 0), OneShotVersion::V1),
            Err(BaselineError::EmptyInput)
        );
    }

    #[test]
    fn parses_bare_digits() {
        assert_eq!(parse_oneshot_label("0"), Some(0));
        assert_eq!(parse_oneshot_label("1"), Some(1));
        assert_eq!(parse_oneshot_label("  1\n"), Some(1));
    }

    #[test]
    fn parses_verbose_replies_with_one_digit() {
        assert_eq!(parse_oneshot_label("The label is 1."), Some(1));
        assert_eq!(parse_oneshot_label("Classification: (0)"), Some(0));
        assert_eq!(parse_oneshot_label("1 1 1"), Some(1));
    }

    #[test]
    fn abstains_on_refusals_and_ambiguity() {
        assert_eq!(parse_oneshot_label("I cannot classify this content."), None);
        assert_eq!(parse_oneshot_label("either 0 or 1"), None);
        assert_eq!(parse_oneshot_label(""), None);
    }

    #[test]
    fn does_not_fabricate_from_larger_numbers() {
        assert_eq!(parse_oneshot_label("10"), None);
        assert_eq!(parse_oneshot_label("0.5"), None);
        assert_eq!(parse_oneshot_label("100% hateful"), None);
        assert_eq!(parse_oneshot_label("v1"), None);
    }

    fn posts(labels: &[u8]) -> Vec<Post> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &label)| {
                let text = if label == 1 {
                    format!("post {i} with frobnik inside")
                } else {
                    format!("post {i} entirely pleasant")
                };
                Post::new(format!("p{i}"), text, label, Platform::Twitter).unwrap()
            })
            .collect()
    }

    #[test]
    fn evaluate_scores_against_gold() {
        let client = LexiconClient::new(lexicon_from_pairs(&[(
            "frobnik",
            FeatureCategory::Derogatory,
        )]));
        let corpus = posts(&[1, 1, 0, 0]);
        let (results, summary) =
            evaluate_oneshot(&corpus, ("frobnik is bad", 1), OneShotVersion::V1, &client).unwrap();
        assert_eq!(results.len(), 4);
        assert_eq!(summary.n_abstained, 0);
        assert_eq!(summary.accuracy_lenient, Some(1.0));
        assert_eq!(summary.accuracy_strict, 1.0);
    }

    #[test]
    fn partial_correctness_scores_fractionally() {
        let results: Vec<OneShotResult> = [Some(1), Some(1), Some(0), Some(0)]
            .iter()
            .enumerate()
            .map(|(i, &label)| OneShotResult {
                post_id: format!("p{i}"),
                raw_response: "stub".to_string(),
                label,
                latency_ms: 0,
            })
            .collect();
        // Gold: 1, 1, 0, 1 → three of four correct.
        let corpus = posts(&[1, 1, 0, 1]);
        let summary = score_oneshot(&results, &corpus).unwrap();
        assert_eq!(summary.accuracy_lenient, Some(0.75));
        assert_eq!(summary.accuracy_strict, 0.75);
        assert_eq!(summary.abstain_rate, 0.0);
    }

    #[test]
    fn all_abstain_is_undefined_lenient_and_zero_strict() {
        let corpus = posts(&[1, 0]);
        let results: Vec<OneShotResult> = corpus
            .iter()
            .map(|p| OneShotResult {
                post_id: p.id.clone(),
                raw_response: "no comment".to_string(),
                label: None,
                latency_ms: 0,
            })
            .collect();
        let summary = score_oneshot(&results, &corpus).unwrap();
        assert_eq!(summary.accuracy_lenient, None);
        assert_eq!(summary.accuracy_strict, 0.0);
        assert_eq!(summary.abstain_rate, 1.0);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let client = LexiconClient::new(lexicon_from_pairs(&[(
            "frobnik",
            FeatureCategory::Derogatory,
        )]));
        assert_eq!(
            evaluate_oneshot(&[], ("e", 1), OneShotVersion::V1, &client).unwrap_err(),
            BaselineError::EmptyDataset
        );
    }
}
