//! Command implementations. `dispatch` is the single entry point: every
//! subcommand validates what it needs, takes the output lock if it writes,
//! and leaves deterministic artifacts behind.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use shield_core::alignment::{align_corpus, render_overlap_report};
use shield_core::baselines::{classify_oneshot, score_oneshot, OneShotResult};
use shield_core::client::{ClientConfig, ClientError, LexiconClient, LlmClient};
use shield_core::datasets::{dataset_stats, preprocess_text, split_dataset, Post};
use shield_core::embedding::{
    encode_features, feature_set_digest, HashedBagEncoder, Role,
};
use shield_core::extraction::FeatureSet;
use shield_core::fusion::{evaluate_accuracy, train, TrainedModel};

use crate::cache::{EmbeddingCache, FeatureCache};
use crate::checkpoint;
use crate::clients::{HttpLlmClient, RateLimitedClient, RateLimiter, ReplayClient, RetryingClient};
use crate::config::{AppConfig, ClientKind};
use crate::error::AppError;
use crate::extract::{extract_corpus, load_features_jsonl, write_features_jsonl};
use crate::io::{load_posts, write_jsonl_line};
use crate::lock::OutputLock;
use crate::report::{write_alignment_json, write_html, write_json_pretty, write_metrics_jsonl};

#[derive(Debug, Clone)]
pub enum Command {
    Stats {
        dataset: Option<String>,
    },
    Extract {
        dataset: String,
    },
    Train {
        dataset: String,
        features: Option<PathBuf>,
    },
    Eval {
        dataset: String,
        checkpoint: Option<PathBuf>,
        split: SplitChoice,
        features: Option<PathBuf>,
    },
    Align {
        dataset: String,
        features: Option<PathBuf>,
    },
    Baseline {
        dataset: String,
    },
    Report {
        dataset: String,
        features: Option<PathBuf>,
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitChoice {
    Train,
    Val,
    #[default]
    Test,
    All,
}

impl SplitChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitChoice::Train => "train",
            SplitChoice::Val => "val",
            SplitChoice::Test => "test",
            SplitChoice::All => "all",
        }
    }
}

pub fn dispatch(command: &Command, config: &AppConfig) -> Result<(), AppError> {
    match command {
        Command::Stats { dataset } => cmd_stats(config, dataset.as_deref()),
        Command::Extract { dataset } => cmd_extract(config, dataset),
        Command::Train { dataset, features } => cmd_train(config, dataset, features.as_deref()),
        Command::Eval {
            dataset,
            checkpoint,
            split,
            features,
        } => cmd_eval(config, dataset, checkpoint.as_deref(), *split, features.as_deref()),
        Command::Align { dataset, features } => cmd_align(config, dataset, features.as_deref()),
        Command::Baseline { dataset } => cmd_baseline(config, dataset),
        Command::Report {
            dataset,
            features,
            out,
        } => cmd_report(config, dataset, features.as_deref(), out.as_deref()),
    }
}

/// An owned client of whichever kind the config selects.
pub enum OwnedClient {
    Mock(LexiconClient),
    Replay(ReplayClient),
    Live(HttpLlmClient),
}

impl LlmClient for OwnedClient {
    fn config(&self) -> &ClientConfig {
        match self {
            OwnedClient::Mock(c) => c.config(),
            OwnedClient::Replay(c) => c.config(),
            OwnedClient::Live(c) => c.config(),
        }
    }

    fn complete(&self, prompt: &str) -> Result<String, ClientError> {
        match self {
            OwnedClient::Mock(c) => c.complete(prompt),
            OwnedClient::Replay(c) => c.complete(prompt),
            OwnedClient::Live(c) => c.complete(prompt),
        }
    }
}

/// Build the configured client. The live kind validates endpoint and API key
/// up front, before anything could touch the network.
pub fn build_client(config: &AppConfig) -> Result<OwnedClient, AppError> {
    let client_config = config.client_config();
    match config.extraction.client {
        ClientKind::Mock => {
            let lexicon = config.lexicon();
            if lexicon.is_empty() {
                return Err(AppError::config(
                    "extraction.lexicon",
                    "mock client needs at least one term",
                ));
            }
            Ok(OwnedClient::Mock(
                LexiconClient::new(lexicon).with_config(client_config),
            ))
        }
        ClientKind::Replay => {
            let path = config
                .extraction
                .replay_path
                .as_ref()
                .expect("validated at load");
            Ok(OwnedClient::Replay(ReplayClient::from_path(
                path,
                client_config,
            )?))
        }
        ClientKind::Live => {
            if config.extraction.endpoint.trim().is_empty() {
                return Err(AppError::config(
                    "extraction.endpoint",
                    "required for the live client",
                ));
            }
            let api_key = config.api_key.clone().filter(|k| !k.trim().is_empty());
            let Some(api_key) = api_key else {
                return Err(AppError::config(
                    "extraction.api_key",
                    format!("live client selected but no key in {} or the config", crate::config::API_KEY_ENV),
                ));
            };
            Ok(OwnedClient::Live(HttpLlmClient::new(
                config.extraction.endpoint.clone(),
                api_key,
                client_config,
            )?))
        }
    }
}

/// Load a dataset and clean it for the model pipeline: preprocess every text
/// and drop posts that end up empty.
fn prepare_posts(config: &AppConfig, name: &str) -> Result<Vec<Post>, AppError> {
    let ds = config.dataset(name)?;
    let loaded = load_posts(ds)?;
    if loaded.n_dropped > 0 {
        eprintln!("note: {name}: dropped {} records via label mapping", loaded.n_dropped);
    }
    let before = loaded.posts.len();
    let posts: Vec<Post> = loaded
        .posts
        .into_iter()
        .filter_map(|mut post| {
            post.text = preprocess_text(&post.text);
            if post.text.is_empty() {
                None
            } else {
                Some(post)
            }
        })
        .collect();
    if posts.len() < before {
        eprintln!(
            "note: {name}: dropped {} posts empty after preprocessing",
            before - posts.len()
        );
    }
    Ok(posts)
}

fn encoder_pair(config: &AppConfig) -> Result<(HashedBagEncoder, HashedBagEncoder), AppError> {
    let registry = config.encoder_registry();
    let hsd_spec = registry.resolve(&config.encoders.hsd_encoder, Role::TextSide)?;
    let fe_spec = registry.resolve(&config.encoders.fe_encoder, Role::FeatureSide)?;
    Ok((
        HashedBagEncoder::from_spec(hsd_spec)?,
        HashedBagEncoder::from_spec(fe_spec)?,
    ))
}

/// Features from an explicit file when given, otherwise via the configured
/// client and cache.
fn resolve_features(
    config: &AppConfig,
    posts: &[Post],
    features_path: Option<&Path>,
) -> Result<BTreeMap<String, FeatureSet>, AppError> {
    if let Some(path) = features_path {
        return load_features_jsonl(path);
    }
    let client = build_client(config)?;
    let cache = FeatureCache::open(&config.extraction.cache_dir)?;
    let limiter = RateLimiter::new(config.extraction.rate_limit_per_sec);
    let rate_limited = RateLimitedClient::new(&client, &limiter);
    let retrying = RetryingClient::new(&rate_limited);
    extract_corpus(
        posts,
        &retrying,
        &cache,
        config.prompt_version(),
        config.extraction.parallelism,
    )
}

fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn cmd_stats(config: &AppConfig, only: Option<&str>) -> Result<(), AppError> {
    let names: Vec<String> = match only {
        Some(name) => vec![name.to_string()],
        None => config.datasets.keys().cloned().collect(),
    };
    if names.is_empty() {
        return Err(AppError::config("datasets", "no datasets configured"));
    }
    println!("dataset\tposts\thateful\thate_pct");
    for name in names {
        let ds = config.dataset(&name)?;
        let loaded = load_posts(ds)?;
        let stats = dataset_stats(&loaded.posts)?;
        println!(
            "{name}\t{}\t{}\t{:.1}",
            thousands(stats.n_posts),
            thousands(stats.n_hateful),
            stats.hate_pct
        );
    }
    Ok(())
}

fn cmd_extract(config: &AppConfig, dataset: &str) -> Result<(), AppError> {
    let posts = prepare_posts(config, dataset)?;
    let _lock = OutputLock::acquire(&config.output.dir)?;
    let features = resolve_features(config, &posts, None)?;
    let out_path = config.output.dir.join(format!("features_{dataset}.jsonl"));
    write_features_jsonl(&posts, &features, &out_path)?;
    let n_non_hateful = features.values().filter(|f| f.non_hateful).count();
    println!(
        "extracted {} feature sets ({} non-hateful) -> {}",
        features.len(),
        n_non_hateful,
        out_path.display()
    );
    Ok(())
}

fn split_posts(
    config: &AppConfig,
    posts: Vec<Post>,
) -> Result<shield_core::datasets::DatasetSplit, AppError> {
    Ok(split_dataset(
        posts,
        (config.split.train, config.split.val, config.split.test),
        config.split.seed,
    )?)
}

/// Export the feature-side embeddings for every feature set, keyed by
/// feature-set digest. Written as float32; a consumption artifact, not the
/// training path (training stays f64 end to end).
fn export_embedding_cache(
    path: &Path,
    features: &BTreeMap<String, FeatureSet>,
    feature_encoder: &HashedBagEncoder,
) -> Result<(), AppError> {
    let mut cache = if path.exists() {
        EmbeddingCache::load(path)?
    } else {
        EmbeddingCache::new()
    };
    for fs in features.values() {
        let digest = feature_set_digest(fs);
        if cache.get(&digest).is_none() {
            let vector = encode_features(fs, feature_encoder)?;
            cache.put(digest, vector.values.iter().map(|v| *v as f32).collect());
        }
    }
    cache.save(path)
}

fn cmd_train(config: &AppConfig, dataset: &str, features_path: Option<&Path>) -> Result<(), AppError> {
    let posts = prepare_posts(config, dataset)?;
    let _lock = OutputLock::acquire(&config.output.dir)?;
    let features = resolve_features(config, &posts, features_path)?;
    let split = split_posts(config, posts)?;
    let (text_encoder, feature_encoder) = encoder_pair(config)?;
    let train_config = config.train.to_core();

    let started = Instant::now();
    let (model, mut report) = train(
        &split.train,
        &split.val,
        &features,
        text_encoder,
        feature_encoder,
        &train_config,
    )?;
    let elapsed = started.elapsed();

    let checkpoint_dir = config.output.dir.join(format!("checkpoint_{dataset}"));
    checkpoint::save(&model, &train_config, &checkpoint_dir)?;
    report.checkpoint_path = Some(checkpoint_dir.display().to_string());
    write_metrics_jsonl(&report, &config.output.dir.join(format!("metrics_{dataset}.jsonl")))?;

    if let Some(cache_path) = &config.encoders.embedding_cache {
        export_embedding_cache(cache_path, &features, &model.feature_encoder)?;
    }

    for (epoch, (loss, acc)) in report
        .epoch_losses
        .iter()
        .zip(&report.val_accuracies)
        .enumerate()
    {
        println!("epoch {epoch}: train_loss {loss:.6} val_accuracy {acc:.4}");
    }
    println!(
        "best epoch {:?} val_accuracy {:?} ({}s); checkpoint -> {}",
        report.best_epoch,
        report.best_val_accuracy,
        elapsed.as_secs(),
        checkpoint_dir.display()
    );
    if report.frozen_digest_before != report.frozen_digest_after {
        return Err(AppError::Training {
            message: "frozen feature encoder changed during training".to_string(),
        });
    }
    Ok(())
}

#[derive(Debug, serde::Serialize)]
struct EvalSummary {
    dataset: String,
    split: String,
    n_posts: usize,
    accuracy: f64,
    checkpoint: String,
}

fn cmd_eval(
    config: &AppConfig,
    dataset: &str,
    checkpoint_path: Option<&Path>,
    split_choice: SplitChoice,
    features_path: Option<&Path>,
) -> Result<(), AppError> {
    let posts = prepare_posts(config, dataset)?;
    let _lock = OutputLock::acquire(&config.output.dir)?;
    let features = resolve_features(config, &posts, features_path)?;
    let subset: Vec<Post> = match split_choice {
        SplitChoice::All => posts,
        choice => {
            let split = split_posts(config, posts)?;
            match choice {
                SplitChoice::Train => split.train,
                SplitChoice::Val => split.val,
                SplitChoice::Test => split.test,
                SplitChoice::All => unreachable!(),
            }
        }
    };
    let default_dir = config.output.dir.join(format!("checkpoint_{dataset}"));
    let checkpoint_dir = checkpoint_path.unwrap_or(&default_dir);
    let (model, _train_config): (TrainedModel, _) = checkpoint::load(checkpoint_dir)?;
    let accuracy = evaluate_accuracy(&model, &subset, &features)?;
    let summary = EvalSummary {
        dataset: dataset.to_string(),
        split: split_choice.as_str().to_string(),
        n_posts: subset.len(),
        accuracy,
        checkpoint: checkpoint_dir.display().to_string(),
    };
    write_json_pretty(&summary, &config.output.dir.join(format!("eval_{dataset}.json")))?;
    println!(
        "accuracy {:.4} on {} {} posts",
        accuracy,
        summary.n_posts,
        summary.split
    );
    Ok(())
}

fn cmd_align(config: &AppConfig, dataset: &str, features_path: Option<&Path>) -> Result<(), AppError> {
    let posts = prepare_posts(config, dataset)?;
    let _lock = OutputLock::acquire(&config.output.dir)?;
    let features = resolve_features(config, &posts, features_path)?;
    let (_, feature_encoder) = encoder_pair(config)?;
    let result = align_corpus(&features, &posts, &feature_encoder)?;
    let out_path = config.output.dir.join(format!("alignment_{dataset}.json"));
    write_alignment_json(&result, &out_path)?;
    println!(
        "aligned {} posts ({} skipped): overlap {} cosine {} -> {}",
        result.n_evaluated,
        result.n_skipped,
        result
            .aggregate_overlap
            .map_or("n/a".to_string(), |v| format!("{v:.4}")),
        result
            .aggregate_cosine
            .map_or("n/a".to_string(), |v| format!("{v:.4}")),
        out_path.display()
    );
    Ok(())
}

#[derive(Debug, serde::Serialize)]
struct BaselineSummary {
    dataset: String,
    model_id: String,
    prompt_version: String,
    n_posts: usize,
    n_abstained: usize,
    abstain_rate: f64,
    accuracy_lenient: Option<f64>,
    accuracy_strict: f64,
    strict_mode: bool,
}

fn cmd_baseline(config: &AppConfig, dataset: &str) -> Result<(), AppError> {
    let posts = prepare_posts(config, dataset)?;
    if posts.is_empty() {
        return Err(AppError::data(format!("{dataset}: no posts to classify")));
    }
    let _lock = OutputLock::acquire(&config.output.dir)?;
    let client = build_client(config)?;
    let limiter = RateLimiter::new(config.extraction.rate_limit_per_sec);
    let rate_limited = RateLimitedClient::new(&client, &limiter);
    let retrying = RetryingClient::new(&rate_limited);
    let exemplar = (
        config.baseline.exemplar_text.as_str(),
        config.baseline.exemplar_label,
    );
    let version = config.oneshot_version();

    // Bounded-parallel classification, assembled in post order.
    let workers = config.extraction.parallelism.clamp(1, posts.len());
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: std::sync::Mutex<Vec<Option<Result<OneShotResult, AppError>>>> =
        std::sync::Mutex::new((0..posts.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= posts.len() {
                    break;
                }
                let post = &posts[i];
                let started = Instant::now();
                let outcome = classify_oneshot(&post.id, &post.text, exemplar, version, &retrying)
                    .map(|mut r| {
                        r.latency_ms = started.elapsed().as_millis() as u64;
                        r
                    })
                    .map_err(AppError::from);
                slots.lock().expect("slots lock")[i] = Some(outcome);
            });
        }
    });
    let mut results = Vec::with_capacity(posts.len());
    for slot in slots.into_inner().expect("slots lock") {
        results.push(slot.expect("slot filled")?);
    }

    let summary = score_oneshot(&results, &posts)?;
    let results_path = config.output.dir.join(format!("baseline_{dataset}.jsonl"));
    let mut file = std::fs::File::create(&results_path)
        .map_err(|e| AppError::storage(format!("cannot write {}: {e}", results_path.display())))?;
    for result in &results {
        write_jsonl_line(&mut file, result)?;
    }
    let out = BaselineSummary {
        dataset: dataset.to_string(),
        model_id: config.extraction.model_id.clone(),
        prompt_version: config.baseline.prompt_version.clone(),
        n_posts: summary.n_posts,
        n_abstained: summary.n_abstained,
        abstain_rate: summary.abstain_rate,
        accuracy_lenient: summary.accuracy_lenient,
        accuracy_strict: summary.accuracy_strict,
        strict_mode: config.baseline.strict,
    };
    write_json_pretty(&out, &config.output.dir.join(format!("baseline_{dataset}.json")))?;
    let shown = if config.baseline.strict {
        Some(summary.accuracy_strict)
    } else {
        summary.accuracy_lenient
    };
    println!(
        "one-shot accuracy {} abstain_rate {:.4} ({} posts) -> {}",
        shown.map_or("undefined (all abstained)".to_string(), |v| format!("{v:.4}")),
        summary.abstain_rate,
        summary.n_posts,
        results_path.display()
    );
    Ok(())
}

fn cmd_report(
    config: &AppConfig,
    dataset: &str,
    features_path: Option<&Path>,
    out: Option<&Path>,
) -> Result<(), AppError> {
    let posts = prepare_posts(config, dataset)?;
    let _lock = OutputLock::acquire(&config.output.dir)?;
    let features = resolve_features(config, &posts, features_path)?;
    let (_, feature_encoder) = encoder_pair(config)?;
    let result = align_corpus(&features, &posts, &feature_encoder)?;
    let html = render_overlap_report(&posts, &features, &result);
    let default_path = config.output.dir.join(format!("report_{dataset}.html"));
    let out_path = out.unwrap_or(&default_path);
    write_html(&html, out_path)?;
    println!("report -> {}", out_path.display());
    Ok(())
}
