//! Cached feature extraction over a corpus: cache hit, else one client call,
//! parse, persist. Client calls run bounded-parallel behind a shared rate
//! limiter; results assemble deterministically by post id.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use shield_core::client::LlmClient;
use shield_core::datasets::Post;
use shield_core::extraction::{
    build_feature_prompt, cache_key, parse_feature_response, FeatureSet, PromptVersion,
};

use crate::cache::FeatureCache;
use crate::error::AppError;

/// One row of the features JSONL file.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FeatureRecord {
    pub post_id: String,
    pub rationales: Vec<String>,
    pub derogatory_language: Vec<String>,
    pub cuss_words: Vec<String>,
    pub non_hateful: bool,
    pub model_id: String,
    pub prompt_version: String,
}

impl FeatureRecord {
    pub fn from_feature_set(post_id: &str, fs: &FeatureSet) -> Self {
        Self {
            post_id: post_id.to_string(),
            rationales: fs.rationales.clone(),
            derogatory_language: fs.derogatory_language.clone(),
            cuss_words: fs.cuss_words.clone(),
            non_hateful: fs.non_hateful,
            model_id: fs.model_id.clone(),
            prompt_version: fs.prompt_version.clone(),
        }
    }

    pub fn into_feature_set(self) -> FeatureSet {
        // from_lists re-canonicalizes non_hateful, which keeps the
        // empty-lists invariant even for hand-edited files.
        FeatureSet::from_lists(self.rationales, self.derogatory_language, self.cuss_words)
            .with_provenance(self.model_id, self.prompt_version)
    }
}

/// Extract features for one text: cached value on a hit, otherwise call the
/// client, parse, store, return. A reply that fails to parse is parked on
/// disk next to the cache before the error propagates.
pub fn extract_features(
    text: &str,
    client: &(dyn LlmClient + Sync),
    cache: &FeatureCache,
    version: PromptVersion,
) -> Result<FeatureSet, AppError> {
    let config = client.config();
    let key = cache_key(&config.model_id, version, &config.decoding, text);
    if let Some(hit) = cache.lookup(&key)? {
        return Ok(hit);
    }
    let prompt = build_feature_prompt(text, version)?;
    let raw = client.complete(&prompt)?;
    let parsed = match parse_feature_response(&raw) {
        Ok(fs) => fs,
        Err(e) => {
            let parked = cache.store_failed_raw(&key, &raw)?;
            return Err(AppError::Parse {
                message: format!("{e} (raw response kept at {})", parked.display()),
            });
        }
    };
    let fs = parsed.with_provenance(config.model_id.clone(), version.as_str());
    cache.store(&key, &fs)?;
    Ok(fs)
}

/// Extract features for every post, at most `parallelism` client calls in
/// flight. Output order and content are independent of scheduling; on
/// multiple failures the error for the earliest post wins.
pub fn extract_corpus(
    posts: &[Post],
    client: &(dyn LlmClient + Sync),
    cache: &FeatureCache,
    version: PromptVersion,
    parallelism: usize,
) -> Result<BTreeMap<String, FeatureSet>, AppError> {
    let workers = parallelism.clamp(1, posts.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<FeatureSet, AppError>>>> =
        Mutex::new((0..posts.len()).map(|_| None).collect());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= posts.len() {
                    break;
                }
                let outcome = extract_features(&posts[i].text, client, cache, version);
                slots.lock().expect("slots lock")[i] = Some(outcome);
            });
        }
    });

    let mut features = BTreeMap::new();
    for (post, slot) in posts.iter().zip(slots.into_inner().expect("slots lock")) {
        let outcome = slot.expect("every slot filled");
        features.insert(post.id.clone(), outcome?);
    }
    Ok(features)
}

/// Write the features JSONL artifact, one record per post in post order.
pub fn write_features_jsonl(
    posts: &[Post],
    features: &BTreeMap<String, FeatureSet>,
    path: &std::path::Path,
) -> Result<(), AppError> {
    let mut body = String::new();
    for post in posts {
        let Some(fs) = features.get(&post.id) else {
            continue;
        };
        let record = FeatureRecord::from_feature_set(&post.id, fs);
        body.push_str(
            &serde_json::to_string(&record)
                .map_err(|e| AppError::storage(format!("serialize features: {e}")))?,
        );
        body.push('\n');
    }
    std::fs::write(path, body)
        .map_err(|e| AppError::storage(format!("cannot write {}: {e}", path.display())))
}

/// Load a features JSONL artifact into a post-id map.
pub fn load_features_jsonl(
    path: &std::path::Path,
) -> Result<BTreeMap<String, FeatureSet>, AppError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| AppError::data(format!("cannot read {}: {e}", path.display())))?;
    let mut features = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: FeatureRecord = serde_json::from_str(line).map_err(|e| {
            AppError::data(format!("{}:{}: invalid JSON: {e}", path.display(), i + 1))
        })?;
        features.insert(record.post_id.clone(), record.into_feature_set());
    }
    Ok(features)
}
