//! Acceptance suite: one test per release criterion, each printing a
//! PASS line (visible with `cargo test --test acceptance -- --nocapture`).
//!
//! Everything here runs desk-scale and offline. The full-scale mode against
//! live LLMs, pretrained encoders, and the original corpora is documented in
//! the README and stubbed as the ignored criterion 10.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use common::*;

use shield_core::alignment::{
    align_corpus, llm_token_set, normalize_spans, normalize_token, overlap_similarity,
    render_overlap_report, Source, TokenSet,
};
use shield_core::baselines::parse_oneshot_label;
use shield_core::client::lexicon_from_pairs;
use shield_core::datasets::{Platform, Post};
use shield_core::embedding::{
    EmbeddingVector, EncoderRegistry, EncoderSpec, HashedBagEncoder, Role,
};
use shield_core::extraction::{
    lexicon_extract, parse_feature_response, FeatureCategory, FeatureSet,
};
use shield_core::fusion::{
    bce_loss, fuse_embeddings, train, FusionClassifier, FusionError, TrainConfig,
};
use shield_core::nn::sigmoid;
use shield_core::rng::SplitMix64;

fn pass(criterion: &str, detail: &str) {
    println!("ACCEPTANCE {criterion} PASS - {detail}");
}

/// Criterion 1: lexicon mock + stub encoders on a constructed 200-post
/// separable corpus; `train` then `eval` reaches accuracy >= 0.95 within 3
/// epochs, under 2 minutes end to end.
#[test]
fn c1_synthetic_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("posts.jsonl");
    write_synthetic_corpus(&corpus, 200);
    let config_path = dir.path().join("shield.toml");
    std::fs::write(&config_path, synthetic_config(dir.path(), &corpus)).unwrap();
    let config_arg = config_path.to_str().unwrap();

    let started = Instant::now();
    let train_out = run_shield(
        &["--config", config_arg, "train", "--dataset", "synthetic"],
        dir.path(),
    );
    assert!(train_out.status.success(), "{}", stderr_of(&train_out));
    let eval_out = run_shield(
        &["--config", config_arg, "eval", "--dataset", "synthetic"],
        dir.path(),
    );
    assert!(eval_out.status.success(), "{}", stderr_of(&eval_out));
    let elapsed = started.elapsed();

    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/eval_synthetic.json")).unwrap(),
    )
    .unwrap();
    let accuracy = summary["accuracy"].as_f64().unwrap();
    assert!(accuracy >= 0.95, "eval accuracy {accuracy} < 0.95");
    assert!(
        elapsed.as_secs() < 120,
        "took {}s, budget is 120s",
        elapsed.as_secs()
    );
    // The config trains at most 3 epochs; confirm from the metrics log.
    let metrics = std::fs::read_to_string(dir.path().join("out/metrics_synthetic.jsonl")).unwrap();
    assert!(metrics.lines().count() <= 3);
    pass(
        "C1",
        &format!("accuracy {accuracy:.4} in {}s (<= 3 epochs)", elapsed.as_secs()),
    );
}

fn synthetic_posts_and_features(
    n: usize,
) -> (Vec<Post>, BTreeMap<String, FeatureSet>) {
    let lexicon = lexicon_from_pairs(&[("frobnik", FeatureCategory::Derogatory)]);
    let mut posts = Vec::new();
    let mut features = BTreeMap::new();
    for i in 0..n {
        let label = (i % 2) as u8;
        let text = if label == 1 {
            format!("report {i} says frobnik activity near sector {i}")
        } else {
            format!("report {i} says calm weather near sector {i}")
        };
        let post = Post::new(format!("s{i:03}"), text, label, Platform::Other).unwrap();
        features.insert(post.id.clone(), lexicon_extract(&post.text, &lexicon).unwrap());
        posts.push(post);
    }
    (posts, features)
}

/// Criterion 2: the feature-encoder parameter digest is byte-identical
/// before and after a training run of at least 100 optimizer steps.
#[test]
fn c2_frozen_feature_encoder_digest() {
    let (mut posts, features) = synthetic_posts_and_features(180);
    let val_posts = posts.split_off(160);
    let config = TrainConfig {
        learning_rate: 0.05,
        weight_decay: 0.0,
        batch_size: 1, // 160 steps per epoch
        epochs: 1,
        seed: 9,
        decision_threshold: 0.5,
        hidden_dim: 16,
    };
    let text_encoder = HashedBagEncoder::from_spec(EncoderSpec::new("hsd", 16, 256, 1)).unwrap();
    let feature_encoder =
        HashedBagEncoder::from_spec(EncoderSpec::new("fe", 16, 256, 2).frozen()).unwrap();
    let digest_before = feature_encoder.param_digest();

    let (model, report) = train(
        &posts,
        &val_posts,
        &features,
        text_encoder,
        feature_encoder,
        &config,
    )
    .unwrap();

    let steps = posts.len().div_ceil(config.batch_size) * config.epochs;
    assert!(steps >= 100, "only {steps} steps");
    assert_eq!(report.frozen_digest_before, digest_before);
    assert_eq!(report.frozen_digest_after, digest_before);
    assert_eq!(model.feature_encoder.param_digest(), digest_before);
    pass("C2", &format!("digest unchanged across {steps} steps"));
}

/// Criterion 3: batch BCE matches the analytic cases within 1e-6.
#[test]
fn c3_loss_analytics() {
    // References computed from the definition, independent of the
    // implementation path under test.
    let ln2 = (2.0f64).ln();
    let case1 = bce_loss(&[0.5], &[1]).unwrap();
    assert!((case1 - ln2).abs() < 1e-6, "{case1} vs {ln2}");

    let case2 = bce_loss(&[1.0], &[1]).unwrap();
    assert!((0.0..=1e-6).contains(&case2), "epsilon-clamped zero: {case2}");

    let analytic = -(0.8f64.ln() + 0.7f64.ln()) / 2.0;
    let case3 = bce_loss(&[0.8, 0.3], &[1, 0]).unwrap();
    assert!((case3 - analytic).abs() < 1e-6, "{case3} vs {analytic}");
    pass(
        "C3",
        &format!("ln2={case1:.6}, clamped={case2:.2e}, two-case={case3:.6}"),
    );
}

/// Criterion 4: analytic MLP-head gradients match central finite differences
/// on a 6-dim toy head with relative error < 1e-4 at double precision.
#[test]
fn c4_gradient_check() {
    let mut classifier = FusionClassifier::init(6, 4, 0.5, 2024);
    let mut rng = SplitMix64::new(31);
    let x: Vec<f64> = (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let y = 1u8;

    let head = classifier.head().clone();
    let (logit, cache) = head.forward(&x).unwrap();
    let dlogit = sigmoid(logit) - y as f64;
    let mut analytic = vec![0.0; head.params().len()];
    let mut dx = vec![0.0; 6];
    head.backward(&cache, dlogit, &mut analytic, &mut dx);

    let loss = |c: &FusionClassifier| {
        let (logit, _) = c.head().forward(&x).unwrap();
        bce_loss(&[sigmoid(logit)], &[y]).unwrap()
    };
    let mut worst = 0.0f64;
    #[allow(clippy::needless_range_loop)]
    for i in 0..analytic.len() {
        let original = classifier.head().params()[i];
        let h = 1e-6 * (1.0 + original.abs());
        classifier.head_mut().params_mut()[i] = original + h;
        let up = loss(&classifier);
        classifier.head_mut().params_mut()[i] = original - h;
        let down = loss(&classifier);
        classifier.head_mut().params_mut()[i] = original;
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs()).max(1e-8);
        let rel = (analytic[i] - numeric).abs() / scale;
        worst = worst.max(rel);
        assert!(rel < 1e-4, "param {i}: rel err {rel}");
    }
    pass("C4", &format!("worst relative error {worst:.2e} over {} params", analytic.len()));
}

/// Criterion 5: for random dims in [1,64]^2, fusion output length is d1+d2
/// and equals text-first concatenation elementwise; role misuse raises.
#[test]
fn c5_fusion_property() {
    let mut rng = SplitMix64::new(64);
    for _ in 0..200 {
        let d1 = 1 + rng.index(64);
        let d2 = 1 + rng.index(64);
        let text: Vec<f64> = (0..d1).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let feat: Vec<f64> = (0..d2).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let fused = fuse_embeddings(
            &EmbeddingVector::new(text.clone(), Role::TextSide),
            &EmbeddingVector::new(feat.clone(), Role::FeatureSide),
        )
        .unwrap();
        assert_eq!(fused.len(), d1 + d2);
        assert_eq!(&fused[..d1], text.as_slice());
        assert_eq!(&fused[d1..], feat.as_slice());

        let misuse = fuse_embeddings(
            &EmbeddingVector::new(feat.clone(), Role::FeatureSide),
            &EmbeddingVector::new(feat.clone(), Role::FeatureSide),
        );
        assert!(matches!(misuse, Err(FusionError::Role { .. })));
    }
    pass("C5", "200 random dim pairs in [1,64]^2, plus role misuse");
}

/// Criterion 6: overlap equals a brute-force set-intersection oracle on
/// 1,000 random token-set pairs exactly; identity and symmetry hold.
#[test]
fn c6_metric_oracle() {
    let mut rng = SplitMix64::new(1000);
    let sample_set = |rng: &mut SplitMix64| -> TokenSet {
        let size = 1 + rng.index(14);
        let tokens: BTreeSet<String> =
            (0..size).map(|_| format!("tok{}", rng.index(30))).collect();
        TokenSet {
            tokens,
            source: Source::Llm,
        }
    };
    for _ in 0..1000 {
        let a = sample_set(&mut rng);
        let b = sample_set(&mut rng);
        let got = overlap_similarity(&a, &b).unwrap();

        // Oracle: walk one side as a plain vector, count membership by
        // linear scan of the other.
        let va: Vec<&String> = a.tokens.iter().collect();
        let vb: Vec<&String> = b.tokens.iter().collect();
        let mut common = 0usize;
        for x in &va {
            if vb.iter().any(|y| y == x) {
                common += 1;
            }
        }
        let expected = common as f64 / va.len().min(vb.len()) as f64;
        assert_eq!(got, expected, "oracle mismatch");
        assert_eq!(got, overlap_similarity(&b, &a).unwrap(), "symmetry");
        assert_eq!(overlap_similarity(&a, &a).unwrap(), 1.0, "identity");
    }
    pass("C6", "1,000 random pairs equal the brute-force oracle exactly");
}

#[derive(serde::Deserialize)]
struct MalformedCase {
    name: String,
    input: String,
    expect: String,
}

/// Criterion 7: the 20-case malformed-response suite parses or errors with
/// zero crashes, and the one-shot refusal suite abstains on every reply.
#[test]
fn c7_parser_robustness() {
    let cases: Vec<MalformedCase> = serde_json::from_str(
        &std::fs::read_to_string(fixture_path("malformed_responses.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(cases.len(), 20);
    for case in &cases {
        let input = case.input.clone();
        let outcome = std::panic::catch_unwind(move || parse_feature_response(&input));
        let result = outcome.unwrap_or_else(|_| panic!("case {} panicked", case.name));
        match case.expect.as_str() {
            "ok" => assert!(result.is_ok(), "case {} expected ok, got {result:?}", case.name),
            "error" => assert!(result.is_err(), "case {} expected error, got {result:?}", case.name),
            other => panic!("unknown expectation {other}"),
        }
    }

    let refusals = [
        "I cannot classify this content.",
        "As an AI assistant, I can't help with that request.",
        "Sorry, I'm not able to label this text.",
        "It could be either, hard to say.",
        "classification: unknown",
        "either 0 or 1",
        "01",
        "10",
        "0.5",
        "100",
        "yes",
        "no",
        "",
        "label: none",
        "2",
    ];
    let mut abstained = 0usize;
    for reply in refusals {
        if parse_oneshot_label(reply).is_none() {
            abstained += 1;
        }
    }
    assert_eq!(abstained, refusals.len(), "every refusal must abstain");
    pass(
        "C7",
        &format!("20 malformed cases, 0 crashes; {abstained}/{} refusals abstained", refusals.len()),
    );
}

/// Criterion 8: `stats` reproduces the four reference corpus rows exactly,
/// given corpora with those counts.
#[test]
fn c8_stats_reproduction() {
    let rows: [(&str, usize, usize, &str); 4] = [
        ("gab", 14_240, 11_920, "gab\t14,240\t11,920\t83.7"),
        ("reddit", 37_164, 10_562, "reddit\t37,164\t10,562\t28.4"),
        ("twitter", 10_457, 3_933, "twitter\t10,457\t3,933\t37.6"),
        ("youtube", 5_052, 1_699, "youtube\t5,052\t1,699\t33.6"),
    ];
    let dir = tempfile::tempdir().unwrap();
    let mut config = String::new();
    for (name, n_posts, n_hateful, _) in rows {
        let path = dir.path().join(format!("{name}.jsonl"));
        let mut body = String::with_capacity(n_posts * 48);
        for i in 0..n_posts {
            let label = u8::from(i < n_hateful);
            body.push_str(&format!(
                "{{\"id\": \"{name}{i}\", \"text\": \"post {i}\", \"label\": {label}}}\n"
            ));
        }
        std::fs::write(&path, body).unwrap();
        config.push_str(&format!(
            "[datasets.{name}]\npath = \"{}\"\nformat = \"jsonl\"\nplatform = \"{name}\"\n\n",
            path.display()
        ));
    }
    let config_path = dir.path().join("shield.toml");
    std::fs::write(&config_path, config).unwrap();
    let output = run_shield(&["--config", config_path.to_str().unwrap(), "stats"], dir.path());
    assert!(output.status.success(), "{}", stderr_of(&output));
    let stdout = stdout_of(&output);
    for (_, _, _, expected_row) in rows {
        assert!(stdout.contains(expected_row), "missing `{expected_row}` in:\n{stdout}");
    }
    pass("C8", "all four corpus rows reproduced exactly");
}

/// Hand-computed overlap ground truth for the annotated replay fixture:
/// |llm ∩ human| / min(|llm|, |human|) per post, worked out from the token
/// sets the fixture was built from.
const EXPECTED_OVERLAPS: [(&str, f64); 18] = [
    ("hx00", 1.0),       // {vermin filth invaders} vs itself
    ("hx01", 1.0),       // llm {vermin filth} ⊂ human, min 2
    ("hx02", 0.5),       // {vermin rodents}: 1 shared / min 2
    ("hx03", 0.5),       // {parasites leeches pests} vs {scum parasites}: 1 / 2
    ("hx04", 0.0),       // {nonsense} vs {garbage trash waste}
    ("hx06", 1.0),       // same two tokens both sides
    ("hx07", 1.0),       // llm {crooks bandits} ⊂ human, min 2
    ("hx08", 2.0 / 3.0), // {trolls ogres} shared / min 3
    ("hx09", 1.0),       // human {serpents snakes} ⊂ llm, min 2
    ("hx10", 1.0),       // llm {worms} ⊂ human, min 1
    ("hx11", 0.5),       // {plague} shared / min 2
    ("hx12", 0.5),       // {beasts} shared / min 2
    ("hx13", 1.0),       // human ⊂ llm, min 2
    ("hx14", 1.0),       // {fools idiots morons} shared / min 3
    ("hx15", 0.0),       // {liars} vs {traitors betrayers backstabbers}
    ("hx16", 2.0 / 3.0), // {demons fiends} shared / min 3
    ("hx18", 1.0),       // {fakes frauds phonies} shared / min 3
    ("hx19", 1.0),       // human ⊂ llm, min 3
];

fn load_fixture_posts() -> Vec<Post> {
    use shield_cli::config::{DataFormat, DatasetConfig, LabelRule};
    let mut label_map = BTreeMap::new();
    label_map.insert("hatespeech".to_string(), LabelRule::Assign(1));
    label_map.insert("offensive".to_string(), LabelRule::Assign(1));
    label_map.insert("normal".to_string(), LabelRule::Assign(0));
    let loaded = shield_cli::io::load_posts(&DatasetConfig {
        path: fixture_path("hatexplain_fixture.json"),
        format: DataFormat::Hatexplain,
        platform: Platform::Gab,
        label_map,
    })
    .unwrap();
    loaded
        .posts
        .into_iter()
        .map(|mut p| {
            p.text = shield_core::datasets::preprocess_text(&p.text);
            p
        })
        .collect()
}

fn fixture_feature_encoder() -> HashedBagEncoder {
    let spec = EncoderRegistry::with_builtins()
        .resolve("feature-default", Role::FeatureSide)
        .unwrap();
    HashedBagEncoder::from_spec(spec).unwrap()
}

/// Criterion 9: replay determinism over the >= 20-post annotated fixture.
/// Per-example overlaps equal hand-computed ground truth to 1e-9, cosines
/// equal an independent recomputation to 1e-9, the report's purple token set
/// equals the token intersection on every post, and two CLI runs are
/// byte-identical.
#[test]
fn c9_replay_determinism() {
    // Library-level: extract via replay client and align.
    let posts = load_fixture_posts();
    assert!(posts.len() >= 20);
    let replay = shield_cli::clients::ReplayClient::from_path(
        &fixture_path("replay.jsonl"),
        shield_core::client::ClientConfig::default(),
    )
    .unwrap();
    let cache_dir = tempfile::tempdir().unwrap();
    let cache = shield_cli::cache::FeatureCache::open(cache_dir.path()).unwrap();
    let features = shield_cli::extract::extract_corpus(
        &posts,
        &replay,
        &cache,
        shield_core::extraction::PromptVersion::V1,
        4,
    )
    .unwrap();
    let encoder = fixture_feature_encoder();
    let result = align_corpus(&features, &posts, &encoder).unwrap();

    assert_eq!(result.n_evaluated, 18);
    assert_eq!(result.n_skipped, 2);
    assert_eq!(result.per_example.len(), EXPECTED_OVERLAPS.len());
    for (example, (id, expected)) in result.per_example.iter().zip(EXPECTED_OVERLAPS) {
        assert_eq!(example.post_id, id);
        assert!(
            (example.overlap - expected).abs() < 1e-9,
            "{id}: overlap {} vs hand-computed {expected}",
            example.overlap
        );
    }
    let expected_mean =
        EXPECTED_OVERLAPS.iter().map(|(_, v)| v).sum::<f64>() / EXPECTED_OVERLAPS.len() as f64;
    assert!((result.aggregate_overlap.unwrap() - expected_mean).abs() < 1e-9);

    // Cosine oracle: recompute from encoder outputs with separate loops.
    let by_id: BTreeMap<&str, &Post> = posts.iter().map(|p| (p.id.as_str(), p)).collect();
    for example in &result.per_example {
        let post = by_id[example.post_id.as_str()];
        let llm = llm_token_set(&features[&example.post_id]);
        let human = normalize_spans(post.human_rationales.as_deref().unwrap(), Source::Human);
        let a = encoder.encode(&llm.joined()).unwrap();
        let b = encoder.encode(&human.joined()).unwrap();
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        let oracle = dot / (na * nb);
        assert!(
            (example.cosine - oracle).abs() < 1e-9,
            "{}: cosine {} vs oracle {oracle}",
            example.post_id,
            example.cosine
        );
    }
    // Identical joined strings embed identically: cosine is 1 by hand.
    for id in ["hx00", "hx06"] {
        let example = result.per_example.iter().find(|e| e.post_id == id).unwrap();
        assert!((example.cosine - 1.0).abs() < 1e-9, "{id}: {}", example.cosine);
    }

    // Purple set equals the token intersection on every post.
    let html = render_overlap_report(&posts, &features, &result);
    for post in &posts {
        let marker = format!("<div class=\"post\" id=\"{}\">", post.id);
        let start = html.find(&marker).expect("post section present");
        let section = &html[start..html[start..].find("</div>").map(|e| start + e).unwrap()];
        let mut purple: BTreeSet<String> = BTreeSet::new();
        let mut rest = section;
        while let Some(at) = rest.find("<span class=\"both\">") {
            rest = &rest[at + "<span class=\"both\">".len()..];
            let end = rest.find("</span>").unwrap();
            if let Some(tok) = normalize_token(&rest[..end]) {
                purple.insert(tok);
            }
            rest = &rest[end..];
        }
        let llm = llm_token_set(&features[&post.id]);
        let human = normalize_spans(post.human_rationales.as_deref().unwrap_or(&[]), Source::Human);
        let intersection: BTreeSet<String> =
            llm.tokens.intersection(&human.tokens).cloned().collect();
        assert_eq!(purple, intersection, "purple set mismatch on {}", post.id);
    }

    // CLI-level: two runs of align and report are byte-identical.
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("shield.toml");
    std::fs::write(&config_path, replay_config(dir.path())).unwrap();
    let config_arg = config_path.to_str().unwrap();
    let mut align_bytes = Vec::new();
    let mut report_bytes = Vec::new();
    for run in 0..2 {
        let align_out = run_shield(
            &["--config", config_arg, "align", "--dataset", "hatexplain"],
            dir.path(),
        );
        assert!(align_out.status.success(), "{}", stderr_of(&align_out));
        let report_out = run_shield(
            &["--config", config_arg, "report", "--dataset", "hatexplain"],
            dir.path(),
        );
        assert!(report_out.status.success(), "{}", stderr_of(&report_out));
        let a = std::fs::read(dir.path().join("out/alignment_hatexplain.json")).unwrap();
        let r = std::fs::read(dir.path().join("out/report_hatexplain.html")).unwrap();
        if run == 0 {
            align_bytes = a;
            report_bytes = r;
        } else {
            assert_eq!(align_bytes, a, "alignment JSON differs between runs");
            assert_eq!(report_bytes, r, "HTML report differs between runs");
        }
    }

    pass(
        "C9",
        "18 evaluated + 2 skipped; overlaps match hand table, cosines match oracle, purple = intersection, reruns byte-identical",
    );
}

/// Criterion 10 (optional full-scale mode): reproducing the reference
/// accuracy and alignment aggregates needs live LLM access, pretrained
/// transformer encoders, GPU fine-tuning, and the original corpora — none of
/// which exist at desk scale. The README documents the procedure; this stub
/// only states the expectation.
#[test]
#[ignore = "full-scale mode: needs live LLM access, pretrained encoders, and the original corpora (see README)"]
fn c10_full_scale_reference() {
    eprintln!(
        "Full-scale reproduction: wire the live client (SHIELD_LLM_API_KEY), the original \
         corpora, and pretrained encoders per the README, then compare detector accuracy \
         within ±2.0 points and alignment aggregates within ±5 points of the reference rows."
    );
}
