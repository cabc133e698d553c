//! End-to-end CLI behavior: exit codes, error lines, locking, determinism,
//! and the offline command pipelines.

mod common;

use common::*;

fn write_config(dir: &std::path::Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("shield.toml");
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn stats_prints_counts_and_percentages() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("posts.jsonl");
    let mut body = String::new();
    for i in 0..4 {
        let label = u8::from(i < 3);
        body.push_str(&format!("{{\"id\": \"p{i}\", \"text\": \"t{i}\", \"label\": {label}}}\n"));
    }
    std::fs::write(&corpus, body).unwrap();
    let config = write_config(
        dir.path(),
        &format!(
            "[datasets.small]\npath = \"{}\"\nformat = \"jsonl\"\n",
            corpus.display()
        ),
    );
    let output = run_shield(&["--config", config.to_str().unwrap(), "stats"], dir.path());
    assert!(output.status.success(), "{}", stderr_of(&output));
    let stdout = stdout_of(&output);
    assert!(stdout.contains("small\t4\t3\t75.0"), "stdout: {stdout}");
}

#[test]
fn missing_dataset_path_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "[datasets.gab]\npath = \"/nope/gab.jsonl\"\nformat = \"jsonl\"\n",
    );
    let output = run_shield(
        &["--config", config.to_str().unwrap(), "stats", "--dataset", "gab"],
        dir.path(),
    );
    assert_eq!(output.status.code(), Some(2));
    let stderr = stderr_of(&output);
    assert_eq!(stderr.lines().count(), 1, "single line: {stderr}");
    assert!(stderr.contains("error family=config code=2"));
    assert!(stderr.contains("datasets.gab.path"));
}

#[test]
fn live_client_without_api_key_is_a_config_error_and_no_network() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("posts.jsonl");
    write_synthetic_corpus(&corpus, 4);
    let config = write_config(
        dir.path(),
        &format!(
            r#"
[datasets.synthetic]
path = "{}"
format = "jsonl"

[extraction]
client = "live"
endpoint = "https://api.example.com/v1/chat/completions"
cache_dir = "{}"

[output]
dir = "{}"
"#,
            corpus.display(),
            dir.path().join("cache").display(),
            dir.path().join("out").display(),
        ),
    );
    // run_shield sets SHIELD_FORBID_NETWORK and clears SHIELD_LLM_API_KEY:
    // if the key check ever regressed, client construction would still fail
    // loudly on the network tripwire instead of calling out.
    let output = run_shield(
        &["--config", config.to_str().unwrap(), "extract", "--dataset", "synthetic"],
        dir.path(),
    );
    assert_eq!(output.status.code(), Some(2), "{}", stderr_of(&output));
    let stderr = stderr_of(&output);
    assert!(stderr.contains("extraction.api_key"), "stderr: {stderr}");
}

#[test]
fn mock_and_replay_commands_run_under_network_guard() {
    // The whole offline pipeline (extract, align, report) with the network
    // tripwire armed: any attempt to build the live client would abort.
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &replay_config(dir.path()));
    for command in [
        vec!["extract", "--dataset", "hatexplain"],
        vec!["align", "--dataset", "hatexplain"],
        vec!["report", "--dataset", "hatexplain"],
    ] {
        let mut args = vec!["--config", config.to_str().unwrap()];
        args.extend(command.iter());
        let output = run_shield(&args, dir.path());
        assert!(
            output.status.success(),
            "{:?}: {}",
            command,
            stderr_of(&output)
        );
    }
    assert!(dir.path().join("out/features_hatexplain.jsonl").exists());
    assert!(dir.path().join("out/alignment_hatexplain.json").exists());
    assert!(dir.path().join("out/report_hatexplain.html").exists());
}

#[test]
fn extract_output_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &replay_config(dir.path()));
    let args = ["--config", config.to_str().unwrap(), "extract", "--dataset", "hatexplain"];
    let first = run_shield(&args, dir.path());
    assert!(first.status.success(), "{}", stderr_of(&first));
    let path = dir.path().join("out/features_hatexplain.jsonl");
    let bytes_first = std::fs::read(&path).unwrap();
    let second = run_shield(&args, dir.path());
    assert!(second.status.success(), "{}", stderr_of(&second));
    let bytes_second = std::fs::read(&path).unwrap();
    assert_eq!(bytes_first, bytes_second);
}

#[test]
fn lock_file_rejects_concurrent_writers() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &replay_config(dir.path()));
    let out_dir = dir.path().join("out");
    std::fs::create_dir_all(&out_dir).unwrap();
    std::fs::write(out_dir.join(".shield.lock"), "held").unwrap();
    let output = run_shield(
        &["--config", config.to_str().unwrap(), "extract", "--dataset", "hatexplain"],
        dir.path(),
    );
    assert_eq!(output.status.code(), Some(8), "{}", stderr_of(&output));
    assert!(stderr_of(&output).contains("error family=lock"));
}

#[test]
fn eval_with_missing_checkpoint_reports_storage_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("posts.jsonl");
    write_synthetic_corpus(&corpus, 20);
    let config = write_config(dir.path(), &synthetic_config(dir.path(), &corpus));
    let output = run_shield(
        &["--config", config.to_str().unwrap(), "eval", "--dataset", "synthetic"],
        dir.path(),
    );
    assert_eq!(output.status.code(), Some(6), "{}", stderr_of(&output));
    assert!(stderr_of(&output).contains("error family=storage"));
}

#[test]
fn baseline_runs_offline_with_mock_client() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("posts.jsonl");
    write_synthetic_corpus(&corpus, 12);
    let config = write_config(dir.path(), &synthetic_config(dir.path(), &corpus));
    let output = run_shield(
        &["--config", config.to_str().unwrap(), "baseline", "--dataset", "synthetic"],
        dir.path(),
    );
    assert!(output.status.success(), "{}", stderr_of(&output));
    // The mock lexicon classifies exactly by the synthetic token.
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/baseline_synthetic.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["accuracy_lenient"], 1.0);
    assert_eq!(summary["abstain_rate"], 0.0);
    let results = std::fs::read_to_string(dir.path().join("out/baseline_synthetic.jsonl")).unwrap();
    assert_eq!(results.lines().count(), 12);
}

#[test]
fn unknown_arguments_fail_fast() {
    let dir = tempfile::tempdir().unwrap();
    let output = run_shield(&["frobnicate"], dir.path());
    assert!(!output.status.success());
}

#[test]
fn train_accepts_a_features_file() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("posts.jsonl");
    write_synthetic_corpus(&corpus, 40);
    let config = write_config(dir.path(), &synthetic_config(dir.path(), &corpus));
    let config_arg = config.to_str().unwrap();
    let extract = run_shield(
        &["--config", config_arg, "extract", "--dataset", "synthetic"],
        dir.path(),
    );
    assert!(extract.status.success(), "{}", stderr_of(&extract));
    let features = dir.path().join("out/features_synthetic.jsonl");
    let output = run_shield(
        &[
            "--config", config_arg,
            "train", "--dataset", "synthetic",
            "--features", features.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(output.status.success(), "{}", stderr_of(&output));
    assert!(dir.path().join("out/checkpoint_synthetic/manifest.json").exists());
}

#[test]
fn encoder_swap_is_config_only() {
    // Same corpus, same command; swapping the feature encoder by name must
    // change the frozen digest in the checkpoint and nothing else about the
    // workflow.
    let mut digests = Vec::new();
    for fe_name in ["stub-feature", "alt-encoder"] {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("posts.jsonl");
        write_synthetic_corpus(&corpus, 40);
        let body = synthetic_config(dir.path(), &corpus)
            .replace("fe_encoder = \"stub-feature\"", &format!("fe_encoder = \"{fe_name}\""));
        let config = write_config(dir.path(), &body);
        let output = run_shield(
            &["--config", config.to_str().unwrap(), "train", "--dataset", "synthetic"],
            dir.path(),
        );
        assert!(output.status.success(), "{fe_name}: {}", stderr_of(&output));
        let manifest: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join("out/checkpoint_synthetic/manifest.json"))
                .unwrap(),
        )
        .unwrap();
        assert_eq!(manifest["feature_spec"]["name"], fe_name);
        digests.push(manifest["frozen_encoder_digest"].as_str().unwrap().to_string());
    }
    assert_ne!(digests[0], digests[1]);
}

#[test]
fn train_artifacts_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("posts.jsonl");
    write_synthetic_corpus(&corpus, 40);
    let config = write_config(dir.path(), &synthetic_config(dir.path(), &corpus));
    let args = ["--config", config.to_str().unwrap(), "train", "--dataset", "synthetic"];
    let artifact_names = [
        "out/checkpoint_synthetic/manifest.json",
        "out/checkpoint_synthetic/text_encoder.f64le",
        "out/checkpoint_synthetic/head.f64le",
        "out/metrics_synthetic.jsonl",
    ];
    let mut first_bytes = Vec::new();
    for run in 0..2 {
        let output = run_shield(&args, dir.path());
        assert!(output.status.success(), "{}", stderr_of(&output));
        let bytes: Vec<Vec<u8>> = artifact_names
            .iter()
            .map(|name| std::fs::read(dir.path().join(name)).unwrap())
            .collect();
        if run == 0 {
            first_bytes = bytes;
        } else {
            for (name, (a, b)) in artifact_names.iter().zip(first_bytes.iter().zip(&bytes)) {
                assert_eq!(a, b, "{name} differs between runs");
            }
        }
    }
}

#[test]
fn train_exports_embedding_cache_when_configured() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("posts.jsonl");
    write_synthetic_corpus(&corpus, 40);
    let cache_path = dir.path().join("out/feature_vectors.bin");
    let body = synthetic_config(dir.path(), &corpus).replace(
        "[encoders]\n",
        &format!("[encoders]\nembedding_cache = \"{}\"\n", cache_path.display()),
    );
    let config = write_config(dir.path(), &body);
    let output = run_shield(
        &["--config", config.to_str().unwrap(), "train", "--dataset", "synthetic"],
        dir.path(),
    );
    assert!(output.status.success(), "{}", stderr_of(&output));
    let cache = shield_cli::cache::EmbeddingCache::load(&cache_path).unwrap();
    assert!(!cache.is_empty());
    // Every stored vector has the feature encoder's hidden size (16 here).
    let any = cache.get(
        &shield_core::embedding::feature_set_digest(&shield_core::extraction::FeatureSet::non_hateful()),
    );
    assert_eq!(any.map(<[f32]>::len), Some(16));
}
