//! The training loop and in-memory checkpoints.

use alloc::format;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::ContentPolicy;
use crate::dataprep::{make_view_batch, DatasetSplit, Normalization};
use crate::error::{Error, Result};
use crate::image::{ContextAugmentation, Image};
use crate::model::{Con2Model, ModelConfig};
use crate::optim::{anneal_alpha, cosine_lr, AdamW};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Overrides `epochs × batches per epoch` when set.
    pub steps: Option<usize>,
    /// Base images per batch (N); each contributes four views.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub temperature: f64,
    pub augmentation: ContextAugmentation,
    pub content_policy: ContentPolicy,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2048,
            steps: None,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 1e-3,
            temperature: 0.5,
            augmentation: ContextAugmentation::Invert,
            content_policy: ContentPolicy::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::InvalidConfig(format!("train.{key}: {why}")));
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if self.steps == Some(0) {
            return bad("steps", "must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1", "betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps", "must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay", "must be non-negative");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature", "must be positive");
        }
        self.content_policy.validate()
    }

    pub fn total_steps(&self, train_len: usize) -> usize {
        self.steps.unwrap_or(self.epochs * batches_per_epoch(train_len, self.batch_size))
    }
}

fn batches_per_epoch(train_len: usize, batch: usize) -> usize {
    (train_len / batch).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub alpha: f64,
    pub learning_rate: f64,
    pub total: f64,
    pub context: f64,
    pub content: f64,
}

/// Resumable position of the training random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: [u64; 2],
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        let pos = rng.get_word_pos();
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: [(pos >> 64) as u64, pos as u64] }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(((self.word_pos[0] as u128) << 64) | self.word_pos[1] as u128);
        rng
    }
}

/// Trained model plus everything needed to reproduce or continue the run.
pub struct Checkpoint {
    pub model: Con2Model,
    pub train_config: TrainConfig,
    pub normalization: Normalization,
    pub step: usize,
    pub rng: RngState,
    pub optimizer: AdamW,
    pub history: Vec<StepRecord>,
}

impl Checkpoint {
    pub fn model_config(&self) -> &ModelConfig {
        self.model.config()
    }

    pub fn representation_dim(&self) -> usize {
        self.model.config().representation_dim
    }

    /// Normalizes images of the configured input size into a model batch.
    pub fn input_tensor(&self, images: &[Image]) -> Result<Tensor> {
        let s = self.model.config().input_size;
        for img in images {
            if img.height() != s || img.width() != s {
                return Err(Error::ShapeMismatch {
                    expected: format!("{s}x{s}"),
                    got: format!("{}x{}", img.height(), img.width()),
                });
            }
        }
        self.normalization.to_tensor(images)
    }

    /// Evaluation-mode representations, one row per image.
    pub fn encode_images(&self, images: &[Image]) -> Result<Tensor> {
        self.model.encode(&self.input_tensor(images)?)
    }

    pub fn encode(&self, img: &Image) -> Result<Vec<f32>> {
        Ok(self.encode_images(core::slice::from_ref(img))?.data)
    }

    pub fn project_context(&self, representation: &[f32]) -> Result<Vec<f32>> {
        Ok(self.model.project_context(&Tensor::from_vec(&[1, representation.len()], representation.to_vec()))?.data)
    }

    pub fn project_content(&self, representation: &[f32]) -> Result<Vec<f32>> {
        Ok(self.model.project_content(&Tensor::from_vec(&[1, representation.len()], representation.to_vec()))?.data)
    }
}

pub fn train(model_config: &ModelConfig, train_config: &TrainConfig, split: &DatasetSplit) -> Result<Checkpoint> {
    train_with_progress(model_config, train_config, split, |_| {})
}

/// As [`train`], calling `on_step` after every optimizer update.
pub fn train_with_progress(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    split: &DatasetSplit,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<Checkpoint> {
    model_config.validate()?;
    train_config.validate()?;
    split.validate()?;
    if train_config.content_policy.output_size != model_config.input_size {
        return Err(Error::InvalidConfig(format!(
            "train.content_policy.output_size ({}) must equal model.input_size ({})",
            train_config.content_policy.output_size, model_config.input_size
        )));
    }
    let n_train = split.train.len();
    let batch = train_config.batch_size.min(n_train);
    let total = train_config.total_steps(n_train);
    let mut model = Con2Model::new(model_config.clone())?;
    let mut optimizer =
        AdamW::new(train_config.beta1, train_config.beta2, train_config.adam_eps, train_config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut history = Vec::with_capacity(total);

    for step in 0..total {
        if cursor + batch > order.len() {
            order = (0..n_train).collect();
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let base: Vec<(&Image, usize)> = order[cursor..cursor + batch].iter().map(|&i| (&split.train[i], i)).collect();
        cursor += batch;
        let views = make_view_batch(
            &base,
            train_config.augmentation,
            &train_config.content_policy,
            &split.normalization,
            &mut rng,
        )?;
        // α reaches exactly 1 on the last update.
        let alpha = anneal_alpha(step, (total - 1).max(1))?;
        let lr = cosine_lr(train_config.learning_rate, step, total);
        model.zero_grad();
        let value = model.forward_backward(&views, alpha, train_config.temperature)?;
        if !(value.total.is_finite() && value.context.is_finite() && value.content.is_finite()) {
            return Err(Error::NonFiniteLoss {
                step,
                total: value.total,
                context: value.context,
                content: value.content,
                alpha,
            });
        }
        optimizer.update(lr, |f| model.visit_mut(f));
        let record =
            StepRecord { step, alpha, learning_rate: lr, total: value.total, context: value.context, content: value.content };
        on_step(&record);
        history.push(record);
    }

    Ok(Checkpoint {
        model,
        train_config: train_config.clone(),
        normalization: split.normalization,
        step: total,
        rng: RngState::capture(&rng),
        optimizer,
        history,
    })
}
