//! Checkpoint directory: everything needed to reload a trained model and
//! reproduce its evaluation. The frozen feature encoder is rebuilt from its
//! spec and verified against the recorded digest; the trained text encoder
//! and head weights are stored raw (little-endian f64).

use std::path::Path;

use shield_core::embedding::{EncoderSpec, HashedBagEncoder};
use shield_core::fusion::{FusionClassifier, MlpHead, TrainConfig, TrainedModel};

use crate::error::AppError;

const MANIFEST_FILE: &str = "manifest.json";
const TEXT_WEIGHTS_FILE: &str = "text_encoder.f64le";
const HEAD_WEIGHTS_FILE: &str = "head.f64le";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct Manifest {
    format_version: u32,
    train_config: TrainConfig,
    text_spec: EncoderSpec,
    feature_spec: EncoderSpec,
    head_input_dim: usize,
    head_hidden_dim: usize,
    decision_threshold: f64,
    frozen_encoder_digest: String,
    text_encoder_digest: String,
}

pub fn save(model: &TrainedModel, config: &TrainConfig, dir: &Path) -> Result<(), AppError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| AppError::storage(format!("cannot create {}: {e}", dir.display())))?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        train_config: config.clone(),
        text_spec: model.text_encoder.spec().clone(),
        feature_spec: model.feature_encoder.spec().clone(),
        head_input_dim: model.classifier.input_dim(),
        head_hidden_dim: model.classifier.head().hidden_dim(),
        decision_threshold: model.classifier.decision_threshold,
        frozen_encoder_digest: model.feature_encoder.param_digest(),
        text_encoder_digest: model.text_encoder.param_digest(),
    };
    let manifest_json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| AppError::storage(format!("serialize manifest: {e}")))?;
    std::fs::write(dir.join(MANIFEST_FILE), manifest_json)
        .map_err(|e| AppError::storage(format!("write manifest: {e}")))?;
    write_f64le(&dir.join(TEXT_WEIGHTS_FILE), model.text_encoder.params())?;
    write_f64le(&dir.join(HEAD_WEIGHTS_FILE), model.classifier.head().params())?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<(TrainedModel, TrainConfig), AppError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| AppError::storage(format!("cannot read {}: {e}", manifest_path.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| AppError::storage(format!("corrupt manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(AppError::storage(format!(
            "unsupported checkpoint format {}",
            manifest.format_version
        )));
    }

    let table = read_f64le(&dir.join(TEXT_WEIGHTS_FILE))?;
    let text_encoder = HashedBagEncoder::from_parts(manifest.text_spec, table)
        .map_err(|e| AppError::storage(format!("text encoder: {e}")))?;
    if text_encoder.param_digest() != manifest.text_encoder_digest {
        return Err(AppError::storage(
            "text encoder weights do not match the recorded digest".to_string(),
        ));
    }

    // The frozen encoder is a pure function of its spec; rebuild and verify.
    let feature_encoder = HashedBagEncoder::from_spec(manifest.feature_spec)
        .map_err(|e| AppError::storage(format!("feature encoder: {e}")))?;
    if feature_encoder.param_digest() != manifest.frozen_encoder_digest {
        return Err(AppError::storage(
            "rebuilt feature encoder does not match the recorded frozen digest".to_string(),
        ));
    }

    let head_params = read_f64le(&dir.join(HEAD_WEIGHTS_FILE))?;
    let head = MlpHead::from_params(manifest.head_input_dim, manifest.head_hidden_dim, head_params)
        .map_err(|e| AppError::storage(format!("head weights: {e}")))?;
    let classifier = FusionClassifier::from_parts(head, manifest.decision_threshold);

    Ok((
        TrainedModel {
            text_encoder,
            feature_encoder,
            classifier,
        },
        manifest.train_config,
    ))
}

fn write_f64le(path: &Path, values: &[f64]) -> Result<(), AppError> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes)
        .map_err(|e| AppError::storage(format!("cannot write {}: {e}", path.display())))
}

fn read_f64le(path: &Path) -> Result<Vec<f64>, AppError> {
    let bytes = std::fs::read(path)
        .map_err(|e| AppError::storage(format!("cannot read {}: {e}", path.display())))?;
    if bytes.len() % 8 != 0 {
        return Err(AppError::storage(format!(
            "{}: length {} is not a multiple of 8",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}
