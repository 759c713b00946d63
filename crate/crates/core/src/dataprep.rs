//! Context-labeled datasets, four-view training batches and the synthetic
//! desk-scale split.

use alloc::format;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::augment::{sample_content_transform, ContentPolicy, ContentTransform};
use crate::error::{Error, Result};
use crate::image::{ContextAugmentation, Image};
use crate::tensor::Tensor;

/// Per-pixel affine normalization `(x - mean) / std`, applied last.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub mean: f32,
    pub std: f32,
}

impl Default for Normalization {
    fn default() -> Self {
        Self { mean: 0.5, std: 0.5 }
    }
}

impl Normalization {
    /// Converts an image (HWC, values in `[0, 1]`) into normalized CHW
    /// values appended to `out`. Single-channel images are replicated to RGB.
    pub fn write_chw(&self, img: &Image, out: &mut Vec<f32>) {
        let rgb = img.to_rgb();
        let (h, w) = (rgb.height(), rgb.width());
        let px = rgb.pixels();
        for ch in 0..3 {
            for i in 0..h * w {
                out.push((px[i * 3 + ch] - self.mean) / self.std);
            }
        }
    }

    /// Stacks images of equal size into a normalized `[N, 3, H, W]` tensor.
    pub fn to_tensor(&self, images: &[Image]) -> Result<Tensor> {
        let first = images.first().ok_or(Error::EmptyInput("no images to stack"))?;
        let (h, w) = (first.height(), first.width());
        let mut data = Vec::with_capacity(images.len() * 3 * h * w);
        for img in images {
            if img.height() != h || img.width() != w {
                return Err(Error::ShapeMismatch {
                    expected: format!("{h}x{w}"),
                    got: format!("{}x{}", img.height(), img.width()),
                });
            }
            self.write_chw(img, &mut data);
        }
        Ok(Tensor::from_vec(&[images.len(), 3, h, w], data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextItem {
    pub image: Image,
    pub context: u8,
    pub id: usize,
}

/// Every training image labeled 0, plus its context-augmented copy labeled 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextDataset {
    pub items: Vec<ContextItem>,
    pub augmentation: ContextAugmentation,
}

pub fn build_context_dataset(train: &[Image], augmentation: ContextAugmentation) -> Result<ContextDataset> {
    if train.is_empty() {
        return Err(Error::EmptyInput("training set is empty"));
    }
    let mut items = Vec::with_capacity(2 * train.len());
    for (id, img) in train.iter().enumerate() {
        items.push(ContextItem { image: img.clone(), context: 0, id });
    }
    for (id, img) in train.iter().enumerate() {
        items.push(ContextItem { image: augmentation.apply(img), context: 1, id });
    }
    Ok(ContextDataset { items, augmentation })
}

/// `4N` content-augmented views: for every base image `x`, two independent
/// content transforms of `x` (context 0) and two of `t_C(x)` (context 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ContextViewBatch {
    /// Augmented views before normalization.
    pub views: Vec<Image>,
    pub contexts: Vec<u8>,
    pub ids: Vec<usize>,
    pub transforms: Vec<ContentTransform>,
    /// Normalized `[4N, 3, S, S]` model input.
    pub inputs: Tensor,
}

impl ContextViewBatch {
    pub fn base_count(&self) -> usize {
        self.views.len() / 4
    }
}

pub fn make_view_batch<R: Rng + ?Sized>(
    base: &[(&Image, usize)],
    augmentation: ContextAugmentation,
    policy: &ContentPolicy,
    normalization: &Normalization,
    rng: &mut R,
) -> Result<ContextViewBatch> {
    if base.is_empty() {
        return Err(Error::EmptyInput("view batch needs at least one base image"));
    }
    let m = 4 * base.len();
    let mut views = Vec::with_capacity(m);
    let mut contexts = Vec::with_capacity(m);
    let mut ids = Vec::with_capacity(m);
    let mut transforms = Vec::with_capacity(m);
    for &(img, id) in base {
        let shifted = augmentation.apply(img);
        for (source, context) in [(img, 0u8), (img, 0), (&shifted, 1), (&shifted, 1)] {
            let t = sample_content_transform(policy, rng);
            views.push(t.apply(source));
            contexts.push(context);
            ids.push(id);
            transforms.push(t);
        }
    }
    let inputs = normalization.to_tensor(&views)?;
    Ok(ContextViewBatch { views, contexts, ids, transforms, inputs })
}

/// Train images (normal only) and a labeled test split (1 = anomaly).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<Image>,
    pub test: Vec<Image>,
    pub test_labels: Vec<u8>,
    pub normalization: Normalization,
}

impl DatasetSplit {
    pub fn validate(&self) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::EmptyInput("training split is empty"));
        }
        if self.test.len() != self.test_labels.len() {
            return Err(Error::LengthMismatch(format!(
                "{} test images but {} labels",
                self.test.len(),
                self.test_labels.len()
            )));
        }
        if self.test_labels.iter().any(|&l| l > 1) {
            return Err(Error::InvalidConfig("test labels must be 0 (normal) or 1 (anomaly)".into()));
        }
        let anomalies = self.test_labels.iter().filter(|&&l| l == 1).count();
        if anomalies == 0 || anomalies == self.test_labels.len() {
            return Err(Error::SingleClass { positives: anomalies, negatives: self.test_labels.len() - anomalies });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub image_size: usize,
    pub train_normal: usize,
    pub test_normal: usize,
    pub test_anomalous: usize,
    /// Standard deviation of the additive Gaussian pixel noise.
    pub noise: f32,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { image_size: 16, train_normal: 100, test_normal: 50, test_anomalous: 50, noise: 0.05, seed: 0 }
    }
}

/// Square side and top-left corners (normal, anomalous) for a given size.
pub fn synthetic_square_layout(size: usize) -> (usize, (usize, usize), (usize, usize)) {
    let side = (size / 4).max(1);
    let offset = size / 8;
    let half = size / 2;
    (side, (offset, offset), (half + offset, half + offset))
}

/// Dark single-channel images with a bright square: in the top-left quadrant
/// for normal samples, in the bottom-right quadrant for anomalies.
pub fn make_synthetic_split(config: &SyntheticConfig) -> Result<DatasetSplit> {
    if config.image_size < 8 {
        return Err(Error::InvalidConfig(format!("synthetic image_size must be >= 8, got {}", config.image_size)));
    }
    if !(config.noise >= 0.0 && config.noise.is_finite()) {
        return Err(Error::InvalidConfig("synthetic noise must be finite and >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0f32, config.noise).map_err(|e| Error::InvalidConfig(format!("{e}")))?;
    let size = config.image_size;
    let (side, normal_at, anomaly_at) = synthetic_square_layout(size);
    let mut sample = |anomalous: bool| {
        let (r0, c0) = if anomalous { anomaly_at } else { normal_at };
        let background: f32 = rng.random_range(0.05..0.2);
        let square: f32 = rng.random_range(0.75..0.95);
        let jitter: Vec<f32> =
            (0..size * size).map(|_| if config.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 }).collect();
        Image::from_fn(size, size, 1, |r, c, _| {
            let inside = (r0..r0 + side).contains(&r) && (c0..c0 + side).contains(&c);
            (if inside { square } else { background }) + jitter[r * size + c]
        })
    };
    let train = (0..config.train_normal).map(|_| sample(false)).collect::<Result<Vec<_>>>()?;
    let mut labeled: Vec<(Image, u8)> = Vec::with_capacity(config.test_normal + config.test_anomalous);
    for _ in 0..config.test_normal {
        labeled.push((sample(false)?, 0));
    }
    for _ in 0..config.test_anomalous {
        labeled.push((sample(true)?, 1));
    }
    labeled.shuffle(&mut rng);
    let (test, test_labels) = labeled.into_iter().unzip();
    Ok(DatasetSplit { train, test, test_labels, normalization: Normalization::default() })
}
