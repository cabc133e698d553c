//! Embedding fusion and the trained classifier: text-first concatenation of
//! the two embeddings, a two-layer MLP head with a sigmoid output, batch
//! binary cross-entropy, and a deterministic training loop that updates the
//! text-side encoder and the head jointly while the feature encoder stays
//! frozen.
//!
//! Gradients are written by hand and checked against central finite
//! differences in the test suite.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::datasets::Post;
use crate::embedding::{
    encode_features, EmbeddingError, EmbeddingVector, HashedBagEncoder, Role,
};
use crate::extraction::FeatureSet;
use crate::nn::{sigmoid, AdamState, AdamW};
use crate::rng::SplitMix64;

/// Probabilities are clamped to `[EPSILON, 1 - EPSILON]` inside the loss so
/// the logs stay finite.
pub const PROB_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FusionError {
    #[error("expected one text-side and one feature-side embedding, got {first:?} and {second:?}")]
    Role { first: Role, second: Role },
    #[error("input has dimension {got}, classifier expects {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("probability batch has {probs} entries, label batch has {labels}")]
    LengthMismatch { probs: usize, labels: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("missing feature sets for posts: {}", .0.join(", "))]
    MissingFeatures(Vec<String>),
    #[error("loss became non-finite at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// Concatenate the detector text embedding and the frozen feature embedding,
/// text first. The roles must be one of each; anything else is a [`FusionError::Role`].
pub fn fuse_embeddings(
    h_text: &EmbeddingVector,
    h_feat: &EmbeddingVector,
) -> Result<Vec<f64>, FusionError> {
    if h_text.role != Role::TextSide || h_feat.role != Role::FeatureSide {
        return Err(FusionError::Role {
            first: h_text.role,
            second: h_feat.role,
        });
    }
    let mut combined = Vec::with_capacity(h_text.dim() + h_feat.dim());
    combined.extend_from_slice(&h_text.values);
    combined.extend_from_slice(&h_feat.values);
    Ok(combined)
}

/// Batch-mean binary cross-entropy over probabilities in `[0, 1]` and labels
/// in `{0, 1}`, with the probabilities clamped away from the log
/// singularities.
pub fn bce_loss(probabilities: &[f64], labels: &[u8]) -> Result<f64, FusionError> {
    if probabilities.len() != labels.len() {
        return Err(FusionError::LengthMismatch {
            probs: probabilities.len(),
            labels: labels.len(),
        });
    }
    if probabilities.is_empty() {
        return Err(FusionError::EmptyBatch);
    }
    let mut total = 0.0;
    for (&p, &y) in probabilities.iter().zip(labels) {
        let p = p.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON);
        let y = y as f64;
        total -= y * libm::log(p) + (1.0 - y) * libm::log(1.0 - p);
    }
    Ok(total / probabilities.len() as f64)
}

/// Values cached by a head forward pass for backprop.
#[derive(Debug, Clone)]
pub struct HeadCache {
    input: Vec<f64>,
    pre_activation: Vec<f64>,
    hidden: Vec<f64>,
}

/// Two fully connected layers with a ReLU between them and a single output
/// logit. Parameters live in one flat buffer (`w1 | b1 | w2 | b2`) so the
/// optimizer and the finite-difference checks can treat the head as a plain
/// parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpHead {
    input_dim: usize,
    hidden_dim: usize,
    params: Vec<f64>,
}

impl MlpHead {
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut SplitMix64) -> Self {
        let n = Self::param_count(input_dim, hidden_dim);
        let mut params = Vec::with_capacity(n);
        let w1_scale = libm::sqrt(6.0 / (input_dim + hidden_dim) as f64);
        let w2_scale = libm::sqrt(6.0 / (hidden_dim + 1) as f64);
        for _ in 0..input_dim * hidden_dim {
            params.push(rng.uniform(-w1_scale, w1_scale));
        }
        params.extend(core::iter::repeat_n(0.0, hidden_dim)); // b1
        for _ in 0..hidden_dim {
            params.push(rng.uniform(-w2_scale, w2_scale));
        }
        params.push(0.0); // b2
        Self {
            input_dim,
            hidden_dim,
            params,
        }
    }

    pub fn param_count(input_dim: usize, hidden_dim: usize) -> usize {
        input_dim * hidden_dim + hidden_dim + hidden_dim + 1
    }

    /// Rebuild a head from persisted parameters (checkpoint restore).
    pub fn from_params(
        input_dim: usize,
        hidden_dim: usize,
        params: Vec<f64>,
    ) -> Result<Self, FusionError> {
        let expected = Self::param_count(input_dim, hidden_dim);
        if params.len() != expected {
            return Err(FusionError::DimMismatch {
                expected,
                got: params.len(),
            });
        }
        Ok(Self {
            input_dim,
            hidden_dim,
            params,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let w1_end = self.input_dim * self.hidden_dim;
        let b1_end = w1_end + self.hidden_dim;
        let w2_end = b1_end + self.hidden_dim;
        (w1_end, b1_end, w2_end)
    }

    /// Forward pass: `logit = w2 . relu(W1 x + b1) + b2`.
    pub fn forward(&self, x: &[f64]) -> Result<(f64, HeadCache), FusionError> {
        if x.len() != self.input_dim {
            return Err(FusionError::DimMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let (w1_end, b1_end, w2_end) = self.offsets();
        let (d, h) = (self.input_dim, self.hidden_dim);
        let w1 = &self.params[..w1_end];
        let b1 = &self.params[w1_end..b1_end];
        let w2 = &self.params[b1_end..w2_end];
        let b2 = self.params[w2_end];

        let mut pre = vec![0.0; h];
        for j in 0..h {
            let row = &w1[j * d..(j + 1) * d];
            let mut acc = b1[j];
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            pre[j] = acc;
        }
        let hidden: Vec<f64> = pre.iter().map(|&z| crate::nn::relu(z)).collect();
        let mut logit = b2;
        for (w, a) in w2.iter().zip(&hidden) {
            logit += w * a;
        }
        Ok((
            logit,
            HeadCache {
                input: x.to_vec(),
                pre_activation: pre,
                hidden,
            },
        ))
    }

    /// Accumulate parameter gradients for one example given
    /// `dlogit = d loss / d logit`, and add the gradient w.r.t. the input
    /// into `dx` (used to reach the text-side encoder through the
    /// concatenation).
    pub fn backward(&self, cache: &HeadCache, dlogit: f64, grads: &mut [f64], dx: &mut [f64]) {
        debug_assert_eq!(grads.len(), self.params.len());
        debug_assert_eq!(dx.len(), self.input_dim);
        let (w1_end, b1_end, w2_end) = self.offsets();
        let (d, h) = (self.input_dim, self.hidden_dim);
        let w1 = &self.params[..w1_end];
        let w2 = &self.params[b1_end..w2_end];

        grads[w2_end] += dlogit; // b2
        for j in 0..h {
            grads[b1_end + j] += dlogit * cache.hidden[j]; // w2
            let dz = if cache.pre_activation[j] > 0.0 {
                dlogit * w2[j]
            } else {
                0.0
            };
            if dz == 0.0 {
                continue;
            }
            grads[w1_end + j] += dz; // b1
            let w1_row = &w1[j * d..(j + 1) * d];
            let g_row = &mut grads[j * d..(j + 1) * d];
            for i in 0..d {
                g_row[i] += dz * cache.input[i];
                dx[i] += dz * w1_row[i];
            }
        }
    }
}

/// The classification head plus its decision rule.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionClassifier {
    head: MlpHead,
    pub decision_threshold: f64,
}

impl FusionClassifier {
    /// Deterministic initialization: the head consumes the leading draws of
    /// a fresh splitmix stream seeded with `seed`.
    pub fn init(input_dim: usize, hidden_dim: usize, decision_threshold: f64, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        Self {
            head: MlpHead::init(input_dim, hidden_dim, &mut rng),
            decision_threshold,
        }
    }

    pub fn from_parts(head: MlpHead, decision_threshold: f64) -> Self {
        Self {
            head,
            decision_threshold,
        }
    }

    pub fn head(&self) -> &MlpHead {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut MlpHead {
        &mut self.head
    }

    pub fn input_dim(&self) -> usize {
        self.head.input_dim
    }

    /// Probability and hard label for one combined vector. The tie at the
    /// threshold goes to label 1 (`probability >= threshold`).
    pub fn classify(&self, combined: &[f64]) -> Result<(f64, u8), FusionError> {
        let (logit, _) = self.head.forward(combined)?;
        let probability = sigmoid(logit);
        let label = u8::from(probability >= self.decision_threshold);
        Ok((probability, label))
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub decision_threshold: f64,
    pub hidden_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-5,
            weight_decay: 0.01,
            batch_size: 16,
            epochs: 3,
            seed: 42,
            decision_threshold: 0.5,
            hidden_dim: 256,
        }
    }
}

/// What a training run produced, epoch by epoch.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub val_accuracies: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub best_val_accuracy: Option<f64>,
    pub frozen_digest_before: String,
    pub frozen_digest_after: String,
    /// Filled in by the caller once the checkpoint is persisted.
    pub checkpoint_path: Option<String>,
}

/// A trained classifier bundled with both encoders, sufficient to reproduce
/// evaluation.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub text_encoder: HashedBagEncoder,
    pub feature_encoder: HashedBagEncoder,
    pub classifier: FusionClassifier,
}

impl TrainedModel {
    /// Probability and label for one post given its extracted features.
    pub fn predict(&self, post: &Post, features: &FeatureSet) -> Result<(f64, u8), FusionError> {
        let h_text = crate::embedding::encode_text(&post.text, &self.text_encoder)?;
        let h_feat = encode_features(features, &self.feature_encoder)?;
        let combined = fuse_embeddings(&h_text, &h_feat)?;
        self.classifier.classify(&combined)
    }
}

fn collect_missing<'a>(
    posts: impl Iterator<Item = &'a Post>,
    features: &BTreeMap<String, FeatureSet>,
) -> Vec<String> {
    let mut missing: Vec<String> = posts
        .filter(|p| !features.contains_key(&p.id))
        .map(|p| p.id.clone())
        .collect();
    missing.sort_unstable();
    missing.dedup();
    missing
}

/// Train the text-side encoder and the MLP head jointly with AdamW; the
/// feature encoder is used in eval mode only and its parameters are never
/// touched. Deterministic for a fixed config: data order, initialization,
/// and every update derive from `config.seed`.
///
/// The model returned is the best-validation-accuracy snapshot (ties go to
/// the earlier epoch).
pub fn train(
    train_posts: &[Post],
    val_posts: &[Post],
    features: &BTreeMap<String, FeatureSet>,
    mut text_encoder: HashedBagEncoder,
    feature_encoder: HashedBagEncoder,
    config: &TrainConfig,
) -> Result<(TrainedModel, TrainReport), FusionError> {
    let missing = collect_missing(train_posts.iter().chain(val_posts.iter()), features);
    if !missing.is_empty() {
        return Err(FusionError::MissingFeatures(missing));
    }
    if config.epochs > 0 && (train_posts.is_empty() || val_posts.is_empty()) {
        return Err(FusionError::EmptyDataset);
    }

    let frozen_digest_before = feature_encoder.param_digest();

    // Feature-side embeddings are frozen, so compute them once up front.
    let mut feat_vecs: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for post in train_posts.iter().chain(val_posts.iter()) {
        let fs = &features[&post.id];
        feat_vecs.insert(&post.id, encode_features(fs, &feature_encoder)?.values);
    }

    let text_dim = text_encoder.hidden_size();
    let feat_dim = feature_encoder.hidden_size();
    let input_dim = text_dim + feat_dim;
    let mut classifier = FusionClassifier::init(
        input_dim,
        config.hidden_dim,
        config.decision_threshold,
        config.seed,
    );

    let optimizer = AdamW::new(config.learning_rate, config.weight_decay);
    let mut head_state = AdamState::new(classifier.head.params().len());
    let mut enc_state = AdamState::new(text_encoder.params().len());
    let mut head_grads = vec![0.0; classifier.head.params().len()];
    let mut enc_grads = vec![0.0; text_encoder.params().len()];

    // Separate stream from the one the classifier init consumed.
    let mut rng = SplitMix64::new(config.seed ^ 0x9e37_79b9_7f4a_7c15);

    let mut report = TrainReport {
        epoch_losses: Vec::new(),
        val_accuracies: Vec::new(),
        best_epoch: None,
        best_val_accuracy: None,
        frozen_digest_before: frozen_digest_before.clone(),
        frozen_digest_after: frozen_digest_before.clone(),
        checkpoint_path: None,
    };
    let mut best: Option<(Vec<f64>, Vec<f64>)> = None; // (encoder table, head params)

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train_posts.len()).collect();
        rng.shuffle(&mut order);

        let mut loss_sum = 0.0;
        let batch_size = config.batch_size.max(1);
        for (step, batch) in order.chunks(batch_size).enumerate() {
            let n = batch.len() as f64;
            for g in head_grads.iter_mut() {
                *g = 0.0;
            }
            for g in enc_grads.iter_mut() {
                *g = 0.0;
            }
            let mut probs = Vec::with_capacity(batch.len());
            let mut labels = Vec::with_capacity(batch.len());
            for &idx in batch {
                let post = &train_posts[idx];
                let (text_vec, bag_cache) = text_encoder.forward(&post.text)?;
                let mut combined = Vec::with_capacity(input_dim);
                combined.extend_from_slice(&text_vec);
                combined.extend_from_slice(&feat_vecs[post.id.as_str()]);
                let (logit, head_cache) = classifier.head.forward(&combined)?;
                let p = sigmoid(logit);
                probs.push(p);
                labels.push(post.label);

                let dlogit = (p - post.label as f64) / n;
                let mut dcombined = vec![0.0; input_dim];
                classifier
                    .head
                    .backward(&head_cache, dlogit, &mut head_grads, &mut dcombined);
                text_encoder.backward(&bag_cache, &dcombined[..text_dim], &mut enc_grads);
            }
            let batch_loss = bce_loss(&probs, &labels)?;
            if !batch_loss.is_finite() {
                return Err(FusionError::NonFiniteLoss { epoch, step });
            }
            loss_sum += batch_loss * n;

            head_state.advance();
            enc_state.advance();
            optimizer.step(&mut head_state, classifier.head.params_mut(), &head_grads);
            optimizer.step(&mut enc_state, text_encoder.params_mut(), &enc_grads);
        }
        report
            .epoch_losses
            .push(loss_sum / train_posts.len() as f64);

        let val_acc = accuracy_with(
            &text_encoder,
            &classifier,
            val_posts,
            &feat_vecs,
            input_dim,
        )?;
        report.val_accuracies.push(val_acc);
        let improved = report
            .best_val_accuracy
            .is_none_or(|best_acc| val_acc > best_acc);
        if improved {
            report.best_val_accuracy = Some(val_acc);
            report.best_epoch = Some(epoch);
            best = Some((
                text_encoder.params().to_vec(),
                classifier.head.params().to_vec(),
            ));
        }
    }

    if let Some((enc_params, head_params)) = best {
        text_encoder.params_mut().copy_from_slice(&enc_params);
        classifier.head.params_mut().copy_from_slice(&head_params);
    }

    report.frozen_digest_after = feature_encoder.param_digest();

    Ok((
        TrainedModel {
            text_encoder,
            feature_encoder,
            classifier,
        },
        report,
    ))
}

fn accuracy_with(
    text_encoder: &HashedBagEncoder,
    classifier: &FusionClassifier,
    posts: &[Post],
    feat_vecs: &BTreeMap<&str, Vec<f64>>,
    input_dim: usize,
) -> Result<f64, FusionError> {
    if posts.is_empty() {
        return Err(FusionError::EmptyDataset);
    }
    let mut correct = 0usize;
    for post in posts {
        let text_vec = text_encoder.encode(&post.text)?;
        let mut combined = Vec::with_capacity(input_dim);
        combined.extend_from_slice(&text_vec);
        combined.extend_from_slice(&feat_vecs[post.id.as_str()]);
        let (_, label) = classifier.classify(&combined)?;
        if label == post.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / posts.len() as f64)
}

/// Fraction of posts whose predicted label matches the gold label.
pub fn evaluate_accuracy(
    model: &TrainedModel,
    posts: &[Post],
    features: &BTreeMap<String, FeatureSet>,
) -> Result<f64, FusionError> {
    if posts.is_empty() {
        return Err(FusionError::EmptyDataset);
    }
    let missing = collect_missing(posts.iter(), features);
    if !missing.is_empty() {
        return Err(FusionError::MissingFeatures(missing));
    }
    let mut correct = 0usize;
    for post in posts {
        let (_, label) = model.predict(post, &features[&post.id])?;
        if label == post.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / posts.len() as f64)
}
