//! Shared helpers for CLI integration and acceptance tests.

use std::path::{Path, PathBuf};
use std::process::Output;

pub fn shield_bin() -> &'static str {
    env!("CARGO_BIN_EXE_shield")
}

/// Run the shield binary with `args`, no network allowed.
pub fn run_shield(args: &[&str], cwd: &Path) -> Output {
    std::process::Command::new(shield_bin())
        .args(args)
        .current_dir(cwd)
        .env("SHIELD_FORBID_NETWORK", "1")
        .env_remove("SHIELD_LLM_API_KEY")
        .output()
        .expect("shield binary runs")
}

pub fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

pub fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

/// 200-post separable corpus: the synthetic token decides the label.
pub fn write_synthetic_corpus(path: &Path, n: usize) {
    let mut body = String::new();
    for i in 0..n {
        let label = i % 2;
        let text = if label == 1 {
            format!("report {i} says frobnik activity near sector {i}")
        } else {
            format!("report {i} says calm weather near sector {i}")
        };
        body.push_str(&format!(
            "{{\"id\": \"s{i:03}\", \"text\": \"{text}\", \"label\": {label}}}\n"
        ));
    }
    std::fs::write(path, body).unwrap();
}

pub fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// Config for the synthetic mock-extractor pipeline: lexicon mock client and
/// small stub encoders sized so training converges in a couple of epochs.
pub fn synthetic_config(dir: &Path, corpus: &Path) -> String {
    format!(
        r#"
[datasets.synthetic]
path = "{corpus}"
format = "jsonl"
platform = "other"

[extraction]
client = "mock"
cache_dir = "{cache}"

[extraction.lexicon]
frobnik = "derogatory"

[encoders]
hsd_encoder = "stub-text"
fe_encoder = "stub-feature"

[encoders.custom.stub-text]
hidden_size = 16
vocab_size = 512
seed = 101

[encoders.custom.stub-feature]
hidden_size = 16
vocab_size = 512
seed = 202
trainable = false

[train]
learning_rate = 0.05
weight_decay = 0.0
batch_size = 16
epochs = 3
seed = 42
hidden_dim = 32

[split]
train = 0.8
val = 0.1
test = 0.1
seed = 7

[output]
dir = "{out}"
"#,
        corpus = corpus.display(),
        cache = dir.join("cache").display(),
        out = dir.join("out").display(),
    )
}

/// Config for the recorded-response pipeline over the annotated fixture.
pub fn replay_config(dir: &Path) -> String {
    format!(
        r#"
[datasets.hatexplain]
path = "{fixture}"
format = "hatexplain"
platform = "gab"

[datasets.hatexplain.label_map]
hatespeech = 1
offensive = 1
normal = 0

[extraction]
client = "replay"
replay_path = "{replay}"
cache_dir = "{cache}"
model_id = "replay-fixture"

[encoders]
fe_encoder = "feature-default"

[output]
dir = "{out}"
"#,
        fixture = fixture_path("hatexplain_fixture.json").display(),
        replay = fixture_path("replay.jsonl").display(),
        cache = dir.join("cache").display(),
        out = dir.join("out").display(),
    )
}
