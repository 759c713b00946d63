//! Run configuration files (TOML) and shipped presets.

use std::path::{Path, PathBuf};

use con2_core::augment::ContentPolicy;
use con2_core::dataprep::{Normalization, SyntheticConfig};
use con2_core::model::ModelConfig;
use con2_core::scoring::{Regularization, ScoreVariant};
use con2_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    Synthetic,
    Folder,
}

/// On-disk arrangement of a folder dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FolderLayout {
    /// `train/` (normal only), `test/normal/`, `test/anomaly/`.
    #[default]
    SplitFolders,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DatasetSource,
    #[serde(default)]
    pub layout: FolderLayout,
    /// Dataset root for `source = "folder"`; relative paths resolve against
    /// the config file's directory.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Shorter-edge resize before the center crop to `model.input_size`.
    #[serde(default)]
    pub resize_shorter: Option<usize>,
    /// Path fragments that mark anomalous files; any match under `train/`
    /// is rejected.
    #[serde(default = "default_markers")]
    pub anomaly_markers: Vec<String>,
    #[serde(default)]
    pub synthetic: SyntheticConfig,
    #[serde(default)]
    pub normalization: Normalization,
}

fn default_markers() -> Vec<String> {
    vec!["anomaly".into(), "abnormal".into()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringConfig {
    pub variants: Vec<ScoreVariant>,
    /// Number of test-time augmentations (A), even.
    pub test_time_augmentations: usize,
    pub regularization: Regularization,
    /// Seed for drawing the frozen test-time transforms.
    pub seed: u64,
    /// Transform family for test time; the training content policy when unset.
    pub policy: Option<ContentPolicy>,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            variants: vec![ScoreVariant::Nnd, ScoreVariant::Lh],
            test_time_augmentations: 40,
            regularization: Regularization::default(),
            seed: 0,
            policy: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    /// Training-set sizes, ascending.
    pub sizes: Vec<usize>,
    pub queries: usize,
    pub dim: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { sizes: vec![100, 1_000, 10_000], queries: 256, dim: 64, repeats: 5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub silhouette: bool,
    /// Training images added to the embedding export.
    pub embedding_train_samples: usize,
    pub bench: BenchConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { silhouette: true, embedding_train_samples: 50, bench: BenchConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub scoring: ScoringConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads, parses and fully validates a config file. A relative
    /// `dataset.path` is made absolute against the file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config = Self::from_toml(&text)?;
        if let Some(p) = &config.dataset.path {
            if p.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                config.dataset.path = Some(base.join(p));
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("run config serializes");
        hex(&Sha256::digest(json))
    }

    /// The transform family used for test-time augmentation.
    pub fn test_time_policy(&self) -> &ContentPolicy {
        self.scoring.policy.as_ref().unwrap_or(&self.train.content_policy)
    }

    /// Checks everything that does not touch the filesystem.
    pub fn validate_static(&self) -> CliResult<()> {
        let err = |m: String| Err(CliError::Config(m));
        if self.name.trim().is_empty() {
            return err("name: must not be empty".into());
        }
        self.model.validate()?;
        self.train.validate()?;
        let size = self.model.input_size;
        if self.train.content_policy.output_size != size {
            return err(format!(
                "train.content_policy.output_size: {} does not match model.input_size {size}",
                self.train.content_policy.output_size
            ));
        }
        match self.dataset.source {
            DatasetSource::Synthetic => {
                if self.dataset.synthetic.image_size != size {
                    return err(format!(
                        "dataset.synthetic.image_size: {} does not match model.input_size {size}",
                        self.dataset.synthetic.image_size
                    ));
                }
            }
            DatasetSource::Folder => {
                if self.dataset.path.is_none() {
                    return err("dataset.path: required for source = \"folder\"".into());
                }
                if self.dataset.resize_shorter.is_some_and(|r| r < size) {
                    return err(format!("dataset.resize_shorter: must be at least model.input_size {size}"));
                }
            }
        }
        if !(self.dataset.normalization.std > 0.0) {
            return err("dataset.normalization.std: must be positive".into());
        }
        let a = self.scoring.test_time_augmentations;
        if a == 0 || a % 2 != 0 {
            return err(format!("scoring.test_time_augmentations: must be a positive even number, got {a}"));
        }
        if self.scoring.variants.is_empty() {
            return err("scoring.variants: at least one variant is required".into());
        }
        self.scoring.regularization.validate()?;
        if let Some(p) = &self.scoring.policy {
            p.validate()?;
            if p.output_size != size {
                return err(format!("scoring.policy.output_size: {} does not match model.input_size {size}", p.output_size));
            }
        }
        let bench = &self.eval.bench;
        if bench.sizes.is_empty() || bench.sizes.windows(2).any(|w| w[0] >= w[1]) || bench.sizes[0] < 2 {
            return err("eval.bench.sizes: must be non-empty, strictly ascending and at least 2".into());
        }
        if bench.queries == 0 || bench.repeats == 0 || bench.dim < 2 {
            return err("eval.bench: queries and repeats must be positive and dim at least 2".into());
        }
        Ok(())
    }

    pub fn validate(&self) -> CliResult<()> {
        self.validate_static()?;
        if let (DatasetSource::Folder, Some(p)) = (self.dataset.source, &self.dataset.path) {
            if !p.is_dir() {
                return Err(CliError::Config(format!("dataset.path: {} is not a directory", p.display())));
            }
        }
        Ok(())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Desk-scale synthetic run: tiny-cnn on 16×16 images.
pub fn desk_synthetic() -> RunConfig {
    let size = 16;
    RunConfig {
        name: "desk-synthetic".into(),
        dataset: DatasetConfig {
            source: DatasetSource::Synthetic,
            layout: FolderLayout::SplitFolders,
            path: None,
            resize_shorter: None,
            anomaly_markers: default_markers(),
            synthetic: SyntheticConfig { image_size: size, ..SyntheticConfig::default() },
            normalization: Normalization::default(),
        },
        model: ModelConfig::tiny_cnn(size),
        train: TrainConfig {
            steps: Some(500),
            batch_size: 32,
            content_policy: ContentPolicy { output_size: size, ..ContentPolicy::default() },
            ..TrainConfig::default()
        },
        scoring: ScoringConfig { test_time_augmentations: 8, ..ScoringConfig::default() },
        eval: EvalConfig::default(),
    }
}

/// Full-scale settings: ResNet18, 2048 epochs, 40 test-time augmentations,
/// per-dataset batch size and input resolution.
fn full_scale(name: &str, batch_size: usize, resize_shorter: usize, input_size: usize) -> RunConfig {
    RunConfig {
        name: name.into(),
        dataset: DatasetConfig {
            source: DatasetSource::Folder,
            layout: FolderLayout::SplitFolders,
            path: Some(PathBuf::from(format!("../data/{name}"))),
            resize_shorter: Some(resize_shorter),
            anomaly_markers: default_markers(),
            synthetic: SyntheticConfig::default(),
            normalization: Normalization::default(),
        },
        model: ModelConfig::paper_resnet18(input_size),
        train: TrainConfig {
            batch_size,
            content_policy: ContentPolicy { output_size: input_size, ..ContentPolicy::default() },
            ..TrainConfig::default()
        },
        scoring: ScoringConfig::default(),
        eval: EvalConfig::default(),
    }
}

/// Every shipped preset by name.
pub fn presets() -> Vec<RunConfig> {
    vec![
        desk_synthetic(),
        full_scale("breastmnist", 64, 256, 224),
        full_scale("octmnist", 128, 256, 224),
        full_scale("kvasir", 128, 224, 224),
        full_scale("br35h", 128, 256, 224),
        full_scale("pneumonia", 128, 256, 224),
        full_scale("melanoma", 128, 128, 128),
        full_scale("cifar10", 512, 32, 32),
        full_scale("cifar100", 512, 32, 32),
        full_scale("imagenet30", 128, 256, 224),
        full_scale("dogs-vs-cats", 256, 128, 128),
        full_scale("chihuahua-vs-muffin", 256, 128, 128),
    ]
}

pub fn preset(name: &str) -> Option<RunConfig> {
    presets().into_iter().find(|p| p.name == name)
}
