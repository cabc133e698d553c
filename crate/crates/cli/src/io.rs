//! Dataset loading and canonical-format writing.
//!
//! Three input formats: canonical JSON-lines, CSV, and the annotated
//! rationale corpus shape (one JSON object keyed by post id, with
//! per-annotator labels and token masks). Loading is all-or-nothing: any bad
//! record fails the load with its row identified.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::Deserialize;

use shield_core::datasets::{
    spans_from_votes, Platform, Post, RationaleSpan, RATIONALE_VOTE_THRESHOLD,
};

use crate::config::{DataFormat, DatasetConfig, LabelRule};
use crate::error::AppError;

/// A loaded corpus plus how many records the label mapping dropped.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub posts: Vec<Post>,
    pub n_dropped: usize,
}

pub fn load_posts(config: &DatasetConfig) -> Result<LoadedDataset, AppError> {
    match config.format {
        DataFormat::Jsonl => load_jsonl(&config.path, config.platform, &config.label_map),
        DataFormat::Csv => load_csv(&config.path, config.platform, &config.label_map),
        DataFormat::Hatexplain => load_hatexplain(&config.path, config.platform, &config.label_map),
    }
}

/// Outcome of mapping one raw label value.
enum Mapped {
    Label(u8),
    Drop,
}

/// Canonical `0`/`1` always pass through; anything else must appear in the
/// mapping table.
fn map_label(raw: &str, table: &BTreeMap<String, LabelRule>, row: &str) -> Result<Mapped, AppError> {
    if let Some(rule) = table.get(raw) {
        return Ok(match rule {
            LabelRule::Assign(v) => Mapped::Label(*v),
            LabelRule::Action(_) => Mapped::Drop,
        });
    }
    match raw {
        "0" => Ok(Mapped::Label(0)),
        "1" => Ok(Mapped::Label(1)),
        other => Err(AppError::data(format!(
            "{row}: label `{other}` is not 0/1 and has no mapping"
        ))),
    }
}

#[derive(Debug, Deserialize)]
struct JsonlRecord {
    id: Option<serde_json::Value>,
    text: Option<String>,
    label: Option<serde_json::Value>,
    #[serde(default)]
    human_rationales: Option<Vec<RationaleSpan>>,
}

fn value_to_string(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn load_jsonl(
    path: &Path,
    platform: Platform,
    label_map: &BTreeMap<String, LabelRule>,
) -> Result<LoadedDataset, AppError> {
    let file = std::fs::File::open(path)
        .map_err(|e| AppError::data(format!("cannot open {}: {e}", path.display())))?;
    let reader = BufReader::new(file);
    let mut posts = Vec::new();
    let mut n_dropped = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let row = format!("{}:{}", path.display(), i + 1);
        let line = line.map_err(|e| AppError::data(format!("{row}: read error: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: JsonlRecord = serde_json::from_str(&line)
            .map_err(|e| AppError::data(format!("{row}: invalid JSON: {e}")))?;
        let id = record
            .id
            .as_ref()
            .map(value_to_string)
            .ok_or_else(|| AppError::data(format!("{row}: missing field `id`")))?;
        let text = record
            .text
            .ok_or_else(|| AppError::data(format!("{row}: missing field `text`")))?;
        let raw_label = record
            .label
            .as_ref()
            .map(value_to_string)
            .ok_or_else(|| AppError::data(format!("{row}: missing field `label`")))?;
        let label = match map_label(&raw_label, label_map, &row)? {
            Mapped::Label(l) => l,
            Mapped::Drop => {
                n_dropped += 1;
                continue;
            }
        };
        let mut post = Post::new(id, text, label, platform)
            .map_err(|e| AppError::data(format!("{row}: {e}")))?;
        if let Some(spans) = record.human_rationales {
            let tokens = post.tokens();
            for span in &spans {
                // Re-validate bounds against this post's own tokens.
                RationaleSpan::new(span.token_start, span.token_end, &tokens)
                    .map_err(|e| AppError::data(format!("{row}: {e}")))?;
            }
            post = post.with_rationales(spans);
        }
        posts.push(post);
    }
    Ok(LoadedDataset { posts, n_dropped })
}

fn load_csv(
    path: &Path,
    platform: Platform,
    label_map: &BTreeMap<String, LabelRule>,
) -> Result<LoadedDataset, AppError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| AppError::data(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| AppError::data(format!("{}: {e}", path.display())))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (id_col, text_col, label_col) = match (col("id"), col("text"), col("label")) {
        (Some(i), Some(t), Some(l)) => (i, t, l),
        _ => {
            return Err(AppError::data(format!(
                "{}: header must contain id, text, label",
                path.display()
            )))
        }
    };
    let mut posts = Vec::new();
    let mut n_dropped = 0usize;
    for (i, record) in reader.records().enumerate() {
        let row = format!("{}:{}", path.display(), i + 2); // +2: header line
        let record = record.map_err(|e| AppError::data(format!("{row}: {e}")))?;
        let field = |idx: usize, name: &str| {
            record
                .get(idx)
                .map(str::to_string)
                .ok_or_else(|| AppError::data(format!("{row}: missing field `{name}`")))
        };
        let id = field(id_col, "id")?;
        let text = field(text_col, "text")?;
        let raw_label = field(label_col, "label")?;
        match map_label(raw_label.trim(), label_map, &row)? {
            Mapped::Label(label) => {
                posts.push(
                    Post::new(id, text, label, platform)
                        .map_err(|e| AppError::data(format!("{row}: {e}")))?,
                );
            }
            Mapped::Drop => n_dropped += 1,
        }
    }
    Ok(LoadedDataset { posts, n_dropped })
}

#[derive(Debug, Deserialize)]
struct AnnotatedRecord {
    #[serde(default)]
    post_id: Option<String>,
    annotators: Vec<Annotator>,
    #[serde(default)]
    rationales: Vec<Vec<u8>>,
    post_tokens: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct Annotator {
    label: String,
}

/// Majority label over the annotators; `None` when no label reaches the
/// vote threshold (those records are dropped and counted).
fn majority_label(annotators: &[Annotator]) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for a in annotators {
        *counts.entry(a.label.as_str()).or_default() += 1;
    }
    counts
        .into_iter()
        .find(|(_, n)| *n >= RATIONALE_VOTE_THRESHOLD)
        .map(|(label, _)| label.to_string())
}

fn load_hatexplain(
    path: &Path,
    platform: Platform,
    label_map: &BTreeMap<String, LabelRule>,
) -> Result<LoadedDataset, AppError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| AppError::data(format!("cannot open {}: {e}", path.display())))?;
    let records: BTreeMap<String, AnnotatedRecord> = serde_json::from_str(&text)
        .map_err(|e| AppError::data(format!("{}: invalid JSON: {e}", path.display())))?;

    let mut posts = Vec::new();
    let mut n_dropped = 0usize;
    for (key, record) in records {
        let row = format!("{}:{key}", path.display());
        let id = record.post_id.clone().unwrap_or_else(|| key.clone());
        let Some(raw_label) = majority_label(&record.annotators) else {
            n_dropped += 1;
            continue;
        };
        let label = match map_label(&raw_label, label_map, &row)? {
            Mapped::Label(l) => l,
            Mapped::Drop => {
                n_dropped += 1;
                continue;
            }
        };
        if record.post_tokens.is_empty() {
            return Err(AppError::data(format!("{row}: empty post_tokens")));
        }
        let spans = spans_from_votes(
            &record.rationales,
            &record.post_tokens,
            RATIONALE_VOTE_THRESHOLD,
        )
        .map_err(|e| AppError::data(format!("{row}: {e}")))?;
        let text = record.post_tokens.join(" ");
        let post = Post::new(id, text, label, platform)
            .map_err(|e| AppError::data(format!("{row}: {e}")))?
            .with_rationales(spans);
        posts.push(post);
    }
    Ok(LoadedDataset { posts, n_dropped })
}

/// Write posts in the canonical JSON-lines shape.
pub fn write_posts_jsonl(posts: &[Post], path: &Path) -> Result<(), AppError> {
    let mut out = Vec::new();
    for post in posts {
        let line = serde_json::to_string(post)
            .map_err(|e| AppError::storage(format!("serialize {}: {e}", post.id)))?;
        out.push(line);
    }
    let mut body = out.join("\n");
    body.push('\n');
    std::fs::write(path, body)
        .map_err(|e| AppError::storage(format!("cannot write {}: {e}", path.display())))
}

/// Append one JSON value as a line to an open writer.
pub fn write_jsonl_line<W: Write, T: serde::Serialize>(
    writer: &mut W,
    value: &T,
) -> Result<(), AppError> {
    let line = serde_json::to_string(value)
        .map_err(|e| AppError::storage(format!("serialize: {e}")))?;
    writeln!(writer, "{line}").map_err(|e| AppError::storage(format!("write: {e}")))
}
