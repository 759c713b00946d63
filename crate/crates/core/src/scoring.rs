//! Anomaly scores: nearest-neighbor cosine distance and Gaussian negative
//! log-likelihood over normalized representations, averaged over a frozen
//! set of test-time augmentations.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{Cholesky, DMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{sample_content_transform, ContentPolicy, ContentTransform};
use crate::error::{Error, Result};
use crate::image::{ContextAugmentation, Image};
use crate::tensor::Tensor;
use crate::trainer::Checkpoint;

/// Images per encoder call while fitting and scoring.
const ENCODE_CHUNK: usize = 256;

/// Row-major `rows × dim` representations in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Representations {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Representations {
    pub fn from_tensor(t: &Tensor) -> Self {
        Self { rows: t.batch(), dim: t.item_len(), data: t.data.iter().map(|&v| v as f64).collect() }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn stack(parts: Vec<Self>) -> Self {
        let dim = parts[0].dim;
        let rows = parts.iter().map(|p| p.rows).sum();
        Self { rows, dim, data: parts.into_iter().flat_map(|p| p.data).collect() }
    }
}

/// Anything that maps images to representation rows in evaluation mode.
pub trait Encoder {
    fn encode(&self, images: &[Image]) -> Result<Representations>;
}

impl Encoder for Checkpoint {
    fn encode(&self, images: &[Image]) -> Result<Representations> {
        Ok(Representations::from_tensor(&self.encode_images(images)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreVariant {
    Nnd,
    Lh,
}

impl ScoreVariant {
    pub fn name(self) -> &'static str {
        match self {
            Self::Nnd => "nnd",
            Self::Lh => "lh",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "nnd" => Ok(Self::Nnd),
            "lh" => Ok(Self::Lh),
            other => Err(Error::InvalidConfig(format!("unknown score variant `{other}` (expected nnd or lh)"))),
        }
    }
}

/// `A` frozen content transforms. The first half is applied to the query,
/// the second half to its context-augmented counterpart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestTimePolicy {
    pub transforms: Vec<ContentTransform>,
    pub augmentation: ContextAugmentation,
    pub seed: u64,
}

impl TestTimePolicy {
    pub fn sample(count: usize, policy: &ContentPolicy, augmentation: ContextAugmentation, seed: u64) -> Result<Self> {
        check_count(count)?;
        policy.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let transforms = (0..count).map(|_| sample_content_transform(policy, &mut rng)).collect();
        Ok(Self { transforms, augmentation, seed })
    }

    pub fn from_transforms(transforms: Vec<ContentTransform>, augmentation: ContextAugmentation) -> Result<Self> {
        check_count(transforms.len())?;
        Ok(Self { transforms, augmentation, seed: 0 })
    }

    pub fn count(&self) -> usize {
        self.transforms.len()
    }

    /// Whether transform `index` belongs to the context half.
    pub fn is_context(&self, index: usize) -> bool {
        index >= self.count() / 2
    }

    /// The query image transform `index` sees: `x` or `t_C(x)`.
    fn source(&self, index: usize, img: &Image) -> Image {
        if self.is_context(index) {
            self.augmentation.apply(img)
        } else {
            img.clone()
        }
    }
}

fn check_count(count: usize) -> Result<()> {
    if count == 0 || count % 2 != 0 {
        return Err(Error::InvalidConfig(format!(
            "scoring.test_time_augmentations must be a positive even number, got {count}"
        )));
    }
    Ok(())
}

/// Representations of `t(source)` for every image, in `ENCODE_CHUNK` batches.
fn encode_transformed<E: Encoder + ?Sized>(
    encoder: &E,
    sources: &[Image],
    t: &ContentTransform,
) -> Result<Representations> {
    let mut parts = Vec::new();
    for chunk in sources.chunks(ENCODE_CHUNK) {
        let views: Vec<Image> = chunk.iter().map(|img| t.apply(img)).collect();
        parts.push(encoder.encode(&views)?);
    }
    if parts.is_empty() {
        return Err(Error::EmptyInput("no images to encode"));
    }
    Ok(Representations::stack(parts))
}

/// Training keys for every transform: `g(t_i(x'))` for the original half and
/// `g(t_i(t_C(x')))` for the context half.
fn training_keys<E: Encoder + ?Sized>(encoder: &E, train: &[Image], policy: &TestTimePolicy) -> Result<Vec<Representations>> {
    if train.is_empty() {
        return Err(Error::EmptyInput("training set is empty"));
    }
    let shifted: Vec<Image> = train.iter().map(|img| policy.augmentation.apply(img)).collect();
    policy
        .transforms
        .iter()
        .enumerate()
        .map(|(i, t)| encode_transformed(encoder, if policy.is_context(i) { &shifted } else { train }, t))
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ------------------------------------------------------------------- NND

#[derive(Debug, Clone, PartialEq)]
pub struct NndScoreModel {
    pub policy: TestTimePolicy,
    pub dim: usize,
    pub rows: usize,
    /// One row-major `rows × dim` matrix per transform.
    pub keys: Vec<Vec<f64>>,
    norms: Vec<Vec<f64>>,
}

impl NndScoreModel {
    pub fn from_keys(policy: TestTimePolicy, dim: usize, keys: Vec<Vec<f64>>) -> Result<Self> {
        if keys.len() != policy.count() {
            return Err(Error::LengthMismatch(format!("{} key sets for {} transforms", keys.len(), policy.count())));
        }
        if dim == 0 {
            return Err(Error::InvalidConfig("representation dimension must be positive".into()));
        }
        let rows = keys.first().map_or(0, |k| k.len() / dim);
        if rows == 0 {
            return Err(Error::EmptyInput("training set is empty"));
        }
        let mut norms = Vec::with_capacity(keys.len());
        for (t, k) in keys.iter().enumerate() {
            if k.len() != rows * dim {
                return Err(Error::LengthMismatch(format!("transform {t}: {} values, expected {}", k.len(), rows * dim)));
            }
            let n: Vec<f64> = k.chunks_exact(dim).map(|r| dot(r, r)).collect();
            if n.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidProjectionSet(format!("transform {t}: zero or non-finite training row")));
            }
            norms.push(n);
        }
        Ok(Self { policy, dim, rows, keys, norms })
    }

    pub fn transform_count(&self) -> usize {
        self.keys.len()
    }

    /// `−max_k cos(r, key_k)` against the keys of transform `index`.
    pub fn score_representation(&self, index: usize, r: &[f64]) -> Result<f64> {
        let keys = self.keys.get(index).ok_or(Error::UnknownTransform { index, available: self.keys.len() })?;
        if r.len() != self.dim {
            return Err(Error::ShapeMismatch { expected: format!("{}", self.dim), got: format!("{}", r.len()) });
        }
        let rn = dot(r, r);
        if !(rn > 0.0) {
            return Ok(0.0);
        }
        let mut best = f64::NEG_INFINITY;
        for (row, &kn) in keys.chunks_exact(self.dim).zip(&self.norms[index]) {
            let cos = dot(r, row) / libm::sqrt(rn * kn);
            if cos > best {
                best = cos;
            }
        }
        Ok(-best)
    }
}

pub fn fit_nnd<E: Encoder + ?Sized>(encoder: &E, train: &[Image], policy: &TestTimePolicy) -> Result<NndScoreModel> {
    let keys = training_keys(encoder, train, policy)?;
    let dim = keys[0].dim;
    NndScoreModel::from_keys(policy.clone(), dim, keys.into_iter().map(|t| t.data).collect())
}

/// Nearest-neighbor score of `t_index(x)`; `x` is passed as-is, so queries
/// for the context half should already be context-augmented.
pub fn s_nnd<E: Encoder + ?Sized>(model: &NndScoreModel, encoder: &E, x: &Image, index: usize) -> Result<f64> {
    let t = model.policy.transforms.get(index).ok_or(Error::UnknownTransform { index, available: model.keys.len() })?;
    let r = encoder.encode(&[t.apply(x)])?;
    model.score_representation(index, &r.data)
}

// -------------------------------------------------------------- Gaussian

/// How the covariance ridge ε is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "value")]
pub enum Regularization {
    /// ε = c · trace(Σ) / d, but at least [`Regularization::FLOOR`].
    Relative(f64),
    Absolute(f64),
}

impl Regularization {
    pub const FLOOR: f64 = 1e-9;

    pub fn epsilon(self, trace: f64, dim: usize) -> f64 {
        match self {
            Self::Relative(c) => (c * trace / dim as f64).max(Self::FLOOR),
            Self::Absolute(e) => e,
        }
    }

    pub fn validate(self) -> Result<()> {
        let v = match self {
            Self::Relative(c) | Self::Absolute(c) => c,
        };
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidConfig(format!("scoring.regularization must be finite and >= 0, got {v}")));
        }
        Ok(())
    }
}

impl Default for Regularization {
    fn default() -> Self {
        Self::Relative(1e-6)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub mean: Vec<f64>,
    /// Unbiased sample covariance, row-major `d × d`, without the ridge.
    pub covariance: Vec<f64>,
    pub epsilon: f64,
    /// Lower Cholesky factor of `covariance + εI`, row-major.
    lower: Vec<f64>,
    log_det: f64,
}

impl GaussianComponent {
    /// Fits mean and covariance of the unit-normalized rows.
    pub fn fit(rows: &[f64], dim: usize, regularization: Regularization, transform: usize) -> Result<Self> {
        let n = rows.len() / dim;
        if n < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: n });
        }
        let unit: Vec<Vec<f64>> = rows.chunks_exact(dim).map(unit_f64).collect::<Result<_>>()?;
        let mut mean = vec![0.0; dim];
        for u in &unit {
            mean.iter_mut().zip(u).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut covariance = vec![0.0; dim * dim];
        for u in &unit {
            let c: Vec<f64> = u.iter().zip(&mean).map(|(v, m)| v - m).collect();
            for i in 0..dim {
                for j in 0..=i {
                    covariance[i * dim + j] += c[i] * c[j];
                }
            }
        }
        for i in 0..dim {
            for j in 0..=i {
                let v = covariance[i * dim + j] / (n - 1) as f64;
                covariance[i * dim + j] = v;
                covariance[j * dim + i] = v;
            }
        }
        let trace = (0..dim).map(|i| covariance[i * dim + i]).sum();
        let epsilon = regularization.epsilon(trace, dim);
        Self::from_moments(mean, covariance, epsilon, transform)
    }

    /// Factorizes `covariance + εI`; rejects it when not numerically
    /// positive definite.
    pub fn from_moments(mean: Vec<f64>, covariance: Vec<f64>, epsilon: f64, transform: usize) -> Result<Self> {
        let dim = mean.len();
        if covariance.len() != dim * dim {
            return Err(Error::LengthMismatch(format!("{} covariance entries for dimension {dim}", covariance.len())));
        }
        if mean.iter().chain(&covariance).any(|v| !v.is_finite()) {
            return Err(Error::SingularCovariance { transform, epsilon });
        }
        let mut m = DMatrix::from_row_slice(dim, dim, &covariance);
        for i in 0..dim {
            m[(i, i)] += epsilon;
        }
        let max_diag = (0..dim).map(|i| m[(i, i)]).fold(0.0, f64::max);
        let chol = Cholesky::new(m).ok_or(Error::SingularCovariance { transform, epsilon })?;
        let l = chol.l();
        let mut log_det = 0.0;
        for i in 0..dim {
            let pivot = l[(i, i)];
            if !(pivot * pivot > 1e-12 * max_diag) {
                return Err(Error::SingularCovariance { transform, epsilon });
            }
            log_det += 2.0 * libm::log(pivot);
        }
        let mut lower = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..=i {
                lower[i * dim + j] = l[(i, j)];
            }
        }
        Ok(Self { mean, covariance, epsilon, lower, log_det })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// `−log N(z | μ, Σ + εI)` for an already unit-normalized `z`, by
    /// forward substitution through the Cholesky factor.
    pub fn negative_log_density(&self, z: &[f64]) -> f64 {
        let d = self.dim();
        let mut y = vec![0.0; d];
        let mut maha = 0.0;
        for i in 0..d {
            let row = &self.lower[i * d..i * d + i];
            let s: f64 = row.iter().zip(&y[..i]).map(|(l, v)| l * v).sum();
            y[i] = ((z[i] - self.mean[i]) - s) / self.lower[i * d + i];
            maha += y[i] * y[i];
        }
        0.5 * (d as f64 * libm::log(2.0 * core::f64::consts::PI) + self.log_det + maha)
    }
}

fn unit_f64(r: &[f64]) -> Result<Vec<f64>> {
    let n = libm::sqrt(dot(r, r));
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::InvalidProjectionSet("zero or non-finite representation".into()));
    }
    Ok(r.iter().map(|&v| v / n).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScoreModel {
    pub policy: TestTimePolicy,
    pub regularization: Regularization,
    pub samples: usize,
    pub components: Vec<GaussianComponent>,
}

impl GaussianScoreModel {
    pub fn from_representations(
        policy: TestTimePolicy,
        dim: usize,
        representations: &[Vec<f64>],
        regularization: Regularization,
    ) -> Result<Self> {
        regularization.validate()?;
        if representations.len() != policy.count() {
            return Err(Error::LengthMismatch(format!(
                "{} representation sets for {} transforms",
                representations.len(),
                policy.count()
            )));
        }
        let components = representations
            .iter()
            .enumerate()
            .map(|(t, rows)| GaussianComponent::fit(rows, dim, regularization, t))
            .collect::<Result<Vec<_>>>()?;
        let samples = representations[0].len() / dim.max(1);
        Ok(Self { policy, regularization, samples, components })
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn score_representation(&self, index: usize, r: &[f64]) -> Result<f64> {
        let c = self.components.get(index).ok_or(Error::UnknownTransform { index, available: self.components.len() })?;
        if r.len() != c.dim() {
            return Err(Error::ShapeMismatch { expected: format!("{}", c.dim()), got: format!("{}", r.len()) });
        }
        Ok(c.negative_log_density(&unit_f64(r)?))
    }
}

pub fn fit_gaussian<E: Encoder + ?Sized>(
    encoder: &E,
    train: &[Image],
    policy: &TestTimePolicy,
    regularization: Regularization,
) -> Result<GaussianScoreModel> {
    if train.len() < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: train.len() });
    }
    let keys = training_keys(encoder, train, policy)?;
    let dim = keys[0].dim;
    let reps: Vec<Vec<f64>> = keys.into_iter().map(|t| t.data).collect();
    GaussianScoreModel::from_representations(policy.clone(), dim, &reps, regularization)
}

/// Gaussian score of `t_index(x)`; `x` is passed as-is.
pub fn s_lh<E: Encoder + ?Sized>(model: &GaussianScoreModel, encoder: &E, x: &Image, index: usize) -> Result<f64> {
    let t = model
        .policy
        .transforms
        .get(index)
        .ok_or(Error::UnknownTransform { index, available: model.components.len() })?;
    let r = encoder.encode(&[t.apply(x)])?;
    model.score_representation(index, &r.data)
}

// --------------------------------------------------------- final scores

/// A fitted score model of either variant.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreModel {
    Nnd(NndScoreModel),
    Lh(GaussianScoreModel),
}

impl ScoreModel {
    pub fn fit<E: Encoder + ?Sized>(
        variant: ScoreVariant,
        encoder: &E,
        train: &[Image],
        policy: &TestTimePolicy,
        regularization: Regularization,
    ) -> Result<Self> {
        Ok(match variant {
            ScoreVariant::Nnd => Self::Nnd(fit_nnd(encoder, train, policy)?),
            ScoreVariant::Lh => Self::Lh(fit_gaussian(encoder, train, policy, regularization)?),
        })
    }

    pub fn variant(&self) -> ScoreVariant {
        match self {
            Self::Nnd(_) => ScoreVariant::Nnd,
            Self::Lh(_) => ScoreVariant::Lh,
        }
    }

    pub fn policy(&self) -> &TestTimePolicy {
        match self {
            Self::Nnd(m) => &m.policy,
            Self::Lh(m) => &m.policy,
        }
    }

    pub fn score_representation(&self, index: usize, r: &[f64]) -> Result<f64> {
        match self {
            Self::Nnd(m) => m.score_representation(index, r),
            Self::Lh(m) => m.score_representation(index, r),
        }
    }

    /// Per-transform scores, `[query][transform]`.
    pub fn per_transform_scores<E: Encoder + ?Sized>(
        &self,
        encoder: &E,
        queries: &[Image],
        policy: &TestTimePolicy,
    ) -> Result<Vec<Vec<f64>>> {
        if policy != self.policy() {
            return Err(Error::InvalidConfig(format!(
                "test-time policy ({} transforms) does not match the fitted model ({})",
                policy.count(),
                self.policy().count()
            )));
        }
        let mut out = vec![Vec::with_capacity(policy.count()); queries.len()];
        if queries.is_empty() {
            return Ok(out);
        }
        let shifted: Vec<Image> = queries.iter().map(|img| policy.augmentation.apply(img)).collect();
        for (i, t) in policy.transforms.iter().enumerate() {
            let reps = encode_transformed(encoder, if policy.is_context(i) { &shifted } else { queries }, t)?;
            for (q, row) in out.iter_mut().enumerate() {
                row.push(self.score_representation(i, reps.row(q))?);
            }
        }
        Ok(out)
    }

    /// Test-time averaged score of every query.
    pub fn final_scores<E: Encoder + ?Sized>(
        &self,
        encoder: &E,
        queries: &[Image],
        policy: &TestTimePolicy,
    ) -> Result<Vec<f64>> {
        let per = self.per_transform_scores(encoder, queries, policy)?;
        Ok(per.iter().map(|s| s.iter().sum::<f64>() / s.len() as f64).collect())
    }
}

/// Test-time averaged score of one query.
pub fn final_score<E: Encoder + ?Sized>(
    model: &ScoreModel,
    encoder: &E,
    x: &Image,
    policy: &TestTimePolicy,
) -> Result<f64> {
    if policy.count() != model.policy().count() {
        return Err(Error::InvalidConfig(format!(
            "A = {} does not match the fitted model's {}",
            policy.count(),
            model.policy().count()
        )));
    }
    let mut sum = 0.0;
    for i in 0..policy.count() {
        let source = policy.source(i, x);
        sum += match model {
            ScoreModel::Nnd(m) => s_nnd(m, encoder, &source, i)?,
            ScoreModel::Lh(m) => s_lh(m, encoder, &source, i)?,
        };
    }
    Ok(sum / policy.count() as f64)
}

/// 1 (anomaly) iff the score is strictly above the threshold.
pub fn threshold_predict(scores: &[f64], threshold: f64) -> Vec<u8> {
    scores.iter().map(|&s| u8::from(s > threshold)).collect()
}
