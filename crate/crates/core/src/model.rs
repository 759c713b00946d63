//! Encoder presets and the two projection heads.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataprep::ContextViewBatch;
use crate::error::{Error, Result};
use crate::nn::{BasicBlock, BatchNorm2d, Conv2d, GlobalAvgPool, Linear, MaxPool2d, Module, Param, Relu, Sequential};
use crate::objective::{con2_loss_grad, LossValue, ProjectionSet};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderPreset {
    /// Three conv/batch-norm/ReLU blocks and global average pooling, d = 64.
    TinyCnn,
    /// 18-layer residual network without its classification layer, d = 512.
    PaperResnet18,
}

impl EncoderPreset {
    pub fn name(self) -> &'static str {
        match self {
            Self::TinyCnn => "tiny-cnn",
            Self::PaperResnet18 => "paper-resnet18",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "tiny-cnn" => Ok(Self::TinyCnn),
            "paper-resnet18" => Ok(Self::PaperResnet18),
            other => Err(Error::InvalidConfig(format!("unknown encoder preset `{other}`"))),
        }
    }

    pub fn representation_dim(self) -> usize {
        match self {
            Self::TinyCnn => 64,
            Self::PaperResnet18 => 512,
        }
    }

    fn min_input(self) -> usize {
        match self {
            Self::TinyCnn => 4,
            Self::PaperResnet18 => 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    pub hidden: usize,
    pub output: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderPreset,
    /// Side length of the square network input.
    pub input_size: usize,
    pub representation_dim: usize,
    pub context_head: HeadConfig,
    pub content_head: HeadConfig,
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn tiny_cnn(input_size: usize) -> Self {
        Self {
            encoder: EncoderPreset::TinyCnn,
            input_size,
            representation_dim: 64,
            context_head: HeadConfig { hidden: 64, output: 32 },
            content_head: HeadConfig { hidden: 64, output: 32 },
            init_seed: 0,
        }
    }

    pub fn paper_resnet18(input_size: usize) -> Self {
        Self {
            encoder: EncoderPreset::PaperResnet18,
            input_size,
            representation_dim: 512,
            context_head: HeadConfig { hidden: 512, output: 128 },
            content_head: HeadConfig { hidden: 512, output: 128 },
            init_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let expected = self.encoder.representation_dim();
        if self.representation_dim != expected {
            return Err(Error::InvalidConfig(format!(
                "model.representation_dim: {} produces {expected}, got {}",
                self.encoder.name(),
                self.representation_dim
            )));
        }
        if self.input_size < self.encoder.min_input() {
            return Err(Error::InvalidConfig(format!(
                "model.input_size: {} needs at least {}, got {}",
                self.encoder.name(),
                self.encoder.min_input(),
                self.input_size
            )));
        }
        for (name, head) in [("context_head", self.context_head), ("content_head", self.content_head)] {
            if head.hidden == 0 {
                return Err(Error::InvalidConfig(format!("model.{name}.hidden must be positive")));
            }
            if head.output < 2 {
                return Err(Error::InvalidConfig(format!("model.{name}.output must be >= 2, got {}", head.output)));
            }
        }
        Ok(())
    }
}

fn conv_block(s: Sequential, tag: &str, cin: usize, cout: usize, pool: bool, rng: &mut ChaCha8Rng) -> Sequential {
    let s = s
        .push(&format!("{tag}.conv"), Conv2d::new(cin, cout, 3, 1, 1, false, rng))
        .push(&format!("{tag}.bn"), BatchNorm2d::new(cout))
        .push(&format!("{tag}.relu"), Relu::default());
    if pool {
        s.push(&format!("{tag}.pool"), MaxPool2d::new(2, 2, 0))
    } else {
        s
    }
}

fn build_encoder(preset: EncoderPreset, rng: &mut ChaCha8Rng) -> Sequential {
    match preset {
        EncoderPreset::TinyCnn => {
            let s = conv_block(Sequential::new(), "block1", 3, 16, true, rng);
            let s = conv_block(s, "block2", 16, 32, true, rng);
            conv_block(s, "block3", 32, 64, false, rng).push("pool", GlobalAvgPool::default())
        }
        EncoderPreset::PaperResnet18 => {
            let mut s = Sequential::new()
                .push("conv1", Conv2d::new(3, 64, 7, 2, 3, false, rng))
                .push("bn1", BatchNorm2d::new(64))
                .push("relu", Relu::default())
                .push("maxpool", MaxPool2d::new(3, 2, 1));
            let mut cin = 64;
            for (stage, cout) in [64, 128, 256, 512].into_iter().enumerate() {
                for block in 0..2 {
                    let stride = if stage > 0 && block == 0 { 2 } else { 1 };
                    s = s.push(&format!("layer{}.{block}", stage + 1), BasicBlock::new(cin, cout, stride, rng));
                    cin = cout;
                }
            }
            s.push("avgpool", GlobalAvgPool::default())
        }
    }
}

fn build_head(d: usize, head: HeadConfig, rng: &mut ChaCha8Rng) -> Sequential {
    Sequential::new()
        .push("fc1", Linear::new(d, head.hidden, rng))
        .push("relu", Relu::default())
        .push("fc2", Linear::new(head.hidden, head.output, rng))
}

/// Encoder g_θ with the context head h_φ and the content head h_ψ.
pub struct Con2Model {
    config: ModelConfig,
    encoder: Sequential,
    context_head: Sequential,
    content_head: Sequential,
}

/// One named parameter or buffer, as stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Con2Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let encoder = build_encoder(config.encoder, &mut rng);
        let context_head = build_head(config.representation_dim, config.context_head, &mut rng);
        let content_head = build_head(config.representation_dim, config.content_head, &mut rng);
        Ok(Self { config, encoder, context_head, content_head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Evaluation-mode encoder pass over normalized `[B, 3, S, S]` inputs.
    pub fn encode(&self, inputs: &Tensor) -> Result<Tensor> {
        let s = self.config.input_size;
        let expected = [inputs.shape.first().copied().unwrap_or(0), 3, s, s];
        if inputs.shape.len() != 4 || inputs.shape[1..] != expected[1..] {
            return Err(Error::ShapeMismatch { expected: format!("{expected:?}"), got: format!("{:?}", inputs.shape) });
        }
        Ok(self.encoder.infer(inputs))
    }

    pub fn project_context(&self, representations: &Tensor) -> Result<Tensor> {
        self.check_representation(representations)?;
        Ok(self.context_head.infer(representations))
    }

    pub fn project_content(&self, representations: &Tensor) -> Result<Tensor> {
        self.check_representation(representations)?;
        Ok(self.content_head.infer(representations))
    }

    fn check_representation(&self, r: &Tensor) -> Result<()> {
        let d = self.config.representation_dim;
        if r.shape.len() != 2 || r.shape[1] != d {
            let b = r.shape.first().copied().unwrap_or(0);
            return Err(Error::ShapeMismatch { expected: format!("[{b}, {d}]"), got: format!("{:?}", r.shape) });
        }
        Ok(())
    }

    /// Visits every parameter and buffer as `encoder.*`, `context_head.*`
    /// and `content_head.*`.
    pub fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        self.encoder.visit("encoder", f);
        self.context_head.visit("context_head", f);
        self.content_head.visit("content_head", f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.encoder.visit_mut("encoder", f);
        self.context_head.visit_mut("context_head", f);
        self.content_head.visit_mut("content_head", f);
    }

    pub fn named_tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        self.visit(&mut |name, p| {
            out.push(NamedTensor { name: name.to_string(), shape: p.shape.clone(), data: p.value.clone() })
        });
        out
    }

    /// Loads values saved by [`Con2Model::named_tensors`]; names, order and
    /// shapes must match exactly.
    pub fn load_named_tensors(&mut self, tensors: &[NamedTensor]) -> Result<()> {
        let mut expected = 0usize;
        self.visit(&mut |_, _| expected += 1);
        if tensors.len() != expected {
            return Err(Error::LengthMismatch(format!("{} tensors for {expected} parameters", tensors.len())));
        }
        let mut idx = 0;
        let mut err = None;
        self.visit_mut(&mut |name, p| {
            let t = &tensors[idx];
            idx += 1;
            if err.is_some() {
                return;
            }
            if t.name != name || t.shape != p.shape || t.data.len() != p.value.len() {
                err = Some(Error::LengthMismatch(format!(
                    "parameter {idx}: expected {name} {:?}, found {} {:?}",
                    p.shape, t.name, t.shape
                )));
                return;
            }
            p.value.copy_from_slice(&t.data);
        });
        err.map_or(Ok(()), Err)
    }

    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, p| {
            if p.kind == crate::nn::ParamKind::Trainable {
                n += p.value.len()
            }
        });
        n
    }

    pub fn zero_grad(&mut self) {
        self.visit_mut(&mut |_, p| p.zero_grad());
    }

    /// Training-mode forward pass of a view batch, the Con² loss, and a
    /// backward pass that accumulates into every parameter gradient.
    pub fn forward_backward(&mut self, batch: &ContextViewBatch, alpha: f64, temperature: f64) -> Result<LossValue> {
        let reps = self.encoder.forward_train(&batch.inputs);
        let zc = self.context_head.forward_train(&reps);
        let zp = self.content_head.forward_train(&reps);
        // Diverged weights: report a non-finite loss instead of a malformed set.
        if zc.data.iter().chain(&zp.data).any(|v| !v.is_finite()) {
            return Ok(LossValue { total: f64::NAN, context: f64::NAN, content: f64::NAN, alpha });
        }
        let labels: Vec<usize> = batch.contexts.iter().map(|&c| c as usize).collect();
        let to_set = |z: &Tensor| -> Result<ProjectionSet> {
            ProjectionSet::new(z.data.iter().map(|&v| v as f64).collect(), z.shape[1], temperature)?
                .with_labels(labels.clone())?
                .with_ids(batch.ids.clone())
        };
        let grads = con2_loss_grad(&to_set(&zc)?, &to_set(&zp)?, alpha)?;
        let value = grads.value;
        if !(value.total.is_finite() && value.context.is_finite() && value.content.is_finite()) {
            return Ok(value);
        }
        let as_tensor = |g: &[f64], like: &Tensor| Tensor::from_vec(&like.shape, g.iter().map(|&v| v as f32).collect());
        let d_ctx = self.context_head.backward(&as_tensor(&grads.context_grad, &zc));
        let d_cnt = self.content_head.backward(&as_tensor(&grads.content_grad, &zp));
        let d_reps = Tensor::from_vec(&reps.shape, d_ctx.data.iter().zip(&d_cnt.data).map(|(a, b)| a + b).collect());
        self.encoder.backward(&d_reps);
        Ok(value)
    }
}
