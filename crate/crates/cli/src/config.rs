//! TOML configuration: one file drives every command. Secrets come from the
//! environment (`SHIELD_LLM_API_KEY`), never from the file taking precedence
//! over it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use shield_core::baselines::OneShotVersion;
use shield_core::client::{ClientConfig, DecodingParams};
use shield_core::datasets::Platform;
use shield_core::embedding::{EncoderRegistry, EncoderSpec, DEFAULT_MAX_TOKENS};
use shield_core::extraction::{FeatureCategory, PromptVersion};
use shield_core::fusion::TrainConfig;

use crate::error::AppError;

/// Environment variable holding the live-client API key.
pub const API_KEY_ENV: &str = "SHIELD_LLM_API_KEY";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    #[serde(default)]
    pub datasets: BTreeMap<String, DatasetConfig>,
    #[serde(default)]
    pub extraction: ExtractionConfig,
    #[serde(default)]
    pub encoders: EncodersConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Filled from the environment at load time; never read from the file
    /// when the env var is set.
    #[serde(skip)]
    pub api_key: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    pub format: DataFormat,
    #[serde(default = "default_platform")]
    pub platform: Platform,
    /// Raw label value → 0, 1, or "drop".
    #[serde(default)]
    pub label_map: BTreeMap<String, LabelRule>,
}

fn default_platform() -> Platform {
    Platform::Other
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    Jsonl,
    Csv,
    Hatexplain,
}

/// A label-mapping entry: assign a binary label or drop the record.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum LabelRule {
    Assign(u8),
    Action(String),
}

impl LabelRule {
    pub fn validate(&self, key: &str) -> Result<(), AppError> {
        match self {
            LabelRule::Assign(v) if *v <= 1 => Ok(()),
            LabelRule::Assign(v) => Err(AppError::config(
                key,
                format!("label value must be 0 or 1, got {v}"),
            )),
            LabelRule::Action(a) if a == "drop" => Ok(()),
            LabelRule::Action(a) => Err(AppError::config(
                key,
                format!("unknown label action `{a}` (only \"drop\")"),
            )),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractionConfig {
    #[serde(default = "default_client_kind")]
    pub client: ClientKind,
    #[serde(default = "default_model_id")]
    pub model_id: String,
    #[serde(default)]
    pub endpoint: String,
    #[serde(default = "default_prompt_version")]
    pub prompt_version: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_top_p")]
    pub top_p: f64,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Maximum client calls per second; 0 disables rate limiting.
    #[serde(default)]
    pub rate_limit_per_sec: f64,
    #[serde(default = "default_cache_dir")]
    pub cache_dir: PathBuf,
    /// Replay fixture path (replay client only).
    #[serde(default)]
    pub replay_path: Option<PathBuf>,
    /// API key fallback; the `SHIELD_LLM_API_KEY` env var overrides it.
    #[serde(default)]
    pub api_key: Option<String>,
    /// Term → category table for the deterministic mock client.
    #[serde(default)]
    pub lexicon: BTreeMap<String, String>,
}

fn default_client_kind() -> ClientKind {
    ClientKind::Mock
}
fn default_model_id() -> String {
    "offline-mock".to_string()
}
fn default_prompt_version() -> String {
    "v1".to_string()
}
fn default_temperature() -> f64 {
    0.1
}
fn default_top_p() -> f64 {
    1.0
}
fn default_timeout() -> u64 {
    30
}
fn default_retries() -> u32 {
    3
}
fn default_parallelism() -> usize {
    4
}
fn default_cache_dir() -> PathBuf {
    PathBuf::from("out/cache")
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty extraction section has defaults")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientKind {
    Mock,
    Replay,
    Live,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodersConfig {
    #[serde(default = "default_hsd")]
    pub hsd_encoder: String,
    #[serde(default = "default_fe")]
    pub fe_encoder: String,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    /// Optional exportable cache of feature-side embeddings.
    #[serde(default)]
    pub embedding_cache: Option<PathBuf>,
    /// Extra named encoders, available to `hsd_encoder` / `fe_encoder`.
    #[serde(default)]
    pub custom: BTreeMap<String, CustomEncoder>,
}

fn default_hsd() -> String {
    "detector-default".to_string()
}
fn default_fe() -> String {
    "feature-default".to_string()
}
fn default_max_tokens() -> usize {
    DEFAULT_MAX_TOKENS
}

impl Default for EncodersConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty encoders section has defaults")
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomEncoder {
    pub hidden_size: usize,
    pub vocab_size: usize,
    pub seed: u64,
    #[serde(default = "default_trainable")]
    pub trainable: bool,
}

fn default_trainable() -> bool {
    true
}

/// `[train]` section; mirrors the core TrainConfig with serde defaults.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_train_seed")]
    pub seed: u64,
    #[serde(default = "default_threshold")]
    pub decision_threshold: f64,
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
}

fn default_lr() -> f64 {
    2e-5
}
fn default_weight_decay() -> f64 {
    0.01
}
fn default_batch_size() -> usize {
    16
}
fn default_epochs() -> usize {
    3
}
fn default_train_seed() -> u64 {
    42
}
fn default_threshold() -> f64 {
    0.5
}
fn default_hidden_dim() -> usize {
    256
}

impl Default for TrainSection {
    fn default() -> Self {
        toml::from_str("").expect("empty train section has defaults")
    }
}

impl TrainSection {
    pub fn to_core(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            decision_threshold: self.decision_threshold,
            hidden_dim: self.hidden_dim,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default = "default_split_train")]
    pub train: f64,
    #[serde(default = "default_split_val")]
    pub val: f64,
    #[serde(default = "default_split_test")]
    pub test: f64,
    #[serde(default = "default_split_seed")]
    pub seed: u64,
}

fn default_split_train() -> f64 {
    0.8
}
fn default_split_val() -> f64 {
    0.1
}
fn default_split_test() -> f64 {
    0.1
}
fn default_split_seed() -> u64 {
    7
}

impl Default for SplitConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty split section has defaults")
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    /// Pinned exemplar shown to the model, one per run.
    #[serde(default = "default_exemplar_text")]
    pub exemplar_text: String,
    #[serde(default = "default_exemplar_label")]
    pub exemplar_label: u8,
    #[serde(default = "default_prompt_version")]
    pub prompt_version: String,
    /// Strict scoring counts abstentions as wrong.
    #[serde(default)]
    pub strict: bool,
}

fn default_exemplar_text() -> String {
    "this kind of people should all be removed from our country".to_string()
}
fn default_exemplar_label() -> u8 {
    1
}

impl Default for BaselineConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty baseline section has defaults")
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: default_out_dir(),
        }
    }
}

/// Read, default-fill, and validate the config file. `env_api_key` (from
/// `SHIELD_LLM_API_KEY`) overrides any `extraction.api_key` in the file.
pub fn load_config(path: &Path, env_api_key: Option<String>) -> Result<AppConfig, AppError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| AppError::config("config", format!("cannot read {}: {e}", path.display())))?;
    let mut config: AppConfig = toml::from_str(&text)
        .map_err(|e| AppError::config("config", format!("parse error: {e}")))?;
    config.api_key = env_api_key.or_else(|| config.extraction.api_key.clone());
    config.validate()?;
    Ok(config)
}

impl AppConfig {
    pub fn validate(&self) -> Result<(), AppError> {
        for (name, ds) in &self.datasets {
            for (raw, rule) in &ds.label_map {
                rule.validate(&format!("datasets.{name}.label_map.{raw}"))?;
            }
        }
        if PromptVersion::parse(&self.extraction.prompt_version).is_none() {
            return Err(AppError::config(
                "extraction.prompt_version",
                format!("unknown version `{}`", self.extraction.prompt_version),
            ));
        }
        if OneShotVersion::parse(&self.baseline.prompt_version).is_none() {
            return Err(AppError::config(
                "baseline.prompt_version",
                format!("unknown version `{}`", self.baseline.prompt_version),
            ));
        }
        if self.baseline.exemplar_label > 1 {
            return Err(AppError::config(
                "baseline.exemplar_label",
                "must be 0 or 1",
            ));
        }
        for (term, category) in &self.extraction.lexicon {
            if parse_category(category).is_none() {
                return Err(AppError::config(
                    format!("extraction.lexicon.{term}"),
                    format!("unknown category `{category}` (derogatory | cuss)"),
                ));
            }
        }
        if self.train.learning_rate <= 0.0 {
            return Err(AppError::config("train.learning_rate", "must be positive"));
        }
        if self.train.batch_size == 0 {
            return Err(AppError::config("train.batch_size", "must be at least 1"));
        }
        if self.extraction.client == ClientKind::Replay && self.extraction.replay_path.is_none() {
            return Err(AppError::config(
                "extraction.replay_path",
                "required when extraction.client = \"replay\"",
            ));
        }
        // Both encoder names must resolve against builtins + customs.
        let registry = self.encoder_registry();
        for (key, name) in [
            ("encoders.hsd_encoder", &self.encoders.hsd_encoder),
            ("encoders.fe_encoder", &self.encoders.fe_encoder),
        ] {
            if registry
                .resolve(name, shield_core::embedding::Role::TextSide)
                .is_err()
            {
                return Err(AppError::config(key, format!("unknown encoder `{name}`")));
            }
        }
        Ok(())
    }

    /// Built-in encoders plus the config's custom ones, with the configured
    /// truncation length applied across the board.
    pub fn encoder_registry(&self) -> EncoderRegistry {
        let mut registry = EncoderRegistry::with_builtins();
        for (name, custom) in &self.encoders.custom {
            let mut spec = EncoderSpec::new(
                name.clone(),
                custom.hidden_size,
                custom.vocab_size,
                custom.seed,
            );
            spec.trainable = custom.trainable;
            registry.register(spec);
        }
        let names: Vec<String> = registry.names().map(str::to_string).collect();
        for name in names {
            if let Ok(mut spec) = registry.resolve(&name, shield_core::embedding::Role::TextSide) {
                spec.max_tokens = self.encoders.max_tokens;
                registry.register(spec);
            }
        }
        registry
    }

    /// The dataset entry for `name`, with its path checked to exist.
    pub fn dataset(&self, name: &str) -> Result<&DatasetConfig, AppError> {
        let ds = self
            .datasets
            .get(name)
            .ok_or_else(|| AppError::config(format!("datasets.{name}"), "no such dataset"))?;
        if !ds.path.exists() {
            return Err(AppError::config(
                format!("datasets.{name}.path"),
                format!("{} does not exist", ds.path.display()),
            ));
        }
        Ok(ds)
    }

    pub fn client_config(&self) -> ClientConfig {
        ClientConfig {
            model_id: self.extraction.model_id.clone(),
            decoding: DecodingParams {
                temperature: self.extraction.temperature,
                top_p: self.extraction.top_p,
            },
            timeout_secs: self.extraction.timeout_secs,
            max_retries: self.extraction.max_retries,
        }
    }

    pub fn prompt_version(&self) -> PromptVersion {
        PromptVersion::parse(&self.extraction.prompt_version).expect("validated at load")
    }

    pub fn oneshot_version(&self) -> OneShotVersion {
        OneShotVersion::parse(&self.baseline.prompt_version).expect("validated at load")
    }

    pub fn lexicon(&self) -> BTreeMap<String, FeatureCategory> {
        self.extraction
            .lexicon
            .iter()
            .filter_map(|(term, cat)| parse_category(cat).map(|c| (term.clone(), c)))
            .collect()
    }
}

fn parse_category(s: &str) -> Option<FeatureCategory> {
    match s {
        "derogatory" => Some(FeatureCategory::Derogatory),
        "cuss" => Some(FeatureCategory::Cuss),
        _ => None,
    }
}
