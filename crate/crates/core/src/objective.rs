//! Contrastive objectives over explicit projection sets.
//!
//! Every loss here is a weighted sum of instance-discrimination terms
//!
//! ```text
//! ℓ(i, j) = -log( exp(sim(z_i, z_j)/τ) / Σ_{k≠i} exp(sim(z_i, z_k)/τ) )
//! ```
//!
//! with `sim` the cosine similarity, so they share one evaluation path
//! (`pair_weighted`) that takes a dense `M × M` weight matrix `W` and returns
//! `Σ_ij W_ij ℓ(i, j)` plus, on request, its gradient with respect to every
//! raw (unnormalized) projection vector. Log-sum-exp terms subtract the row
//! maximum before exponentiating.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Projections `z_1..z_M` of dimension `d` with their context labels and
/// base-sample ids.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    vectors: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    ids: Vec<usize>,
    temperature: f64,
}

impl ProjectionSet {
    /// Row-major `vectors` of length `M · dim`. Labels default to 0 and ids to
    /// `0..M`.
    pub fn new(vectors: Vec<f64>, dim: usize, temperature: f64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidProjectionSet(format!("dimension must be >= 2, got {dim}")));
        }
        if vectors.len() % dim != 0 {
            return Err(Error::InvalidProjectionSet(format!(
                "{} values do not form rows of length {dim}",
                vectors.len()
            )));
        }
        let m = vectors.len() / dim;
        if m < 2 {
            return Err(Error::InvalidProjectionSet(format!("need at least 2 vectors, got {m}")));
        }
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::InvalidProjectionSet(format!("temperature must be positive, got {temperature}")));
        }
        for (i, row) in vectors.chunks_exact(dim).enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidProjectionSet(format!("vector {i} has non-finite entries")));
            }
            if row.iter().all(|&v| v == 0.0) {
                return Err(Error::InvalidProjectionSet(format!("vector {i} is the zero vector")));
            }
        }
        Ok(Self { vectors, dim, labels: vec![0; m], ids: (0..m).collect(), temperature })
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::LengthMismatch(format!("{} labels for {} vectors", labels.len(), self.len())));
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn with_ids(mut self, ids: Vec<usize>) -> Result<Self> {
        if ids.len() != self.len() {
            return Err(Error::LengthMismatch(format!("{} ids for {} vectors", ids.len(), self.len())));
        }
        self.ids = ids;
        Ok(self)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.vectors.len() / self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }
}

/// Con² objective value with its term breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub context: f64,
    pub content: f64,
    pub alpha: f64,
}

/// Loss value together with `∂loss/∂z`, row-major like the set's vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Cosine-similarity logits and per-anchor log-normalizers.
struct Logits {
    m: usize,
    unit: Vec<f64>,
    norms: Vec<f64>,
    /// `sim(z_i, z_k) / τ`, row-major `M × M`.
    logits: Vec<f64>,
    /// `log Σ_{k≠i} exp(logits_ik)`.
    log_norm: Vec<f64>,
}

impl Logits {
    fn new(set: &ProjectionSet) -> Self {
        let (m, d) = (set.len(), set.dim);
        let mut unit = Vec::with_capacity(m * d);
        let mut norms = Vec::with_capacity(m);
        for row in set.vectors.chunks_exact(d) {
            let norm = libm::sqrt(row.iter().map(|v| v * v).sum::<f64>());
            norms.push(norm);
            unit.extend(row.iter().map(|v| v / norm));
        }
        let inv_t = 1.0 / set.temperature;
        let mut logits = vec![0.0; m * m];
        for i in 0..m {
            let ui = &unit[i * d..(i + 1) * d];
            for k in i..m {
                let uk = &unit[k * d..(k + 1) * d];
                let s = ui.iter().zip(uk).map(|(a, b)| a * b).sum::<f64>() * inv_t;
                logits[i * m + k] = s;
                logits[k * m + i] = s;
            }
        }
        let log_norm = (0..m)
            .map(|i| {
                let row = &logits[i * m..(i + 1) * m];
                let max = row
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != i)
                    .map(|(_, &v)| v)
                    .fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 =
                    row.iter().enumerate().filter(|&(k, _)| k != i).map(|(_, &v)| libm::exp(v - max)).sum();
                max + libm::log(sum)
            })
            .collect();
        Self { m, unit, norms, logits, log_norm }
    }

    #[inline]
    fn term(&self, i: usize, j: usize) -> f64 {
        self.log_norm[i] - self.logits[i * self.m + j]
    }
}

/// `Σ_ij W_ij ℓ(i, j)` for a dense weight matrix with zero diagonal.
fn pair_weighted(set: &ProjectionSet, weights: &[f64]) -> f64 {
    let lg = Logits::new(set);
    let m = lg.m;
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            let w = weights[i * m + j];
            if w != 0.0 {
                total += w * lg.term(i, j);
            }
        }
    }
    total
}

/// Loss and gradient of `Σ_ij W_ij ℓ(i, j)` with respect to the raw vectors.
///
/// With `G_ik = r_i p_ik - W_ik` (`r_i = Σ_j W_ij`, `p_ik` the softmax over
/// `k ≠ i`), the gradient on unit vectors is `Σ_k (G_ik + G_ki) u_k / τ`,
/// projected onto the tangent space of each `z_i` and divided by `‖z_i‖`.
fn pair_weighted_grad(set: &ProjectionSet, weights: &[f64]) -> LossGrad {
    let lg = Logits::new(set);
    let (m, d) = (lg.m, set.dim);
    let mut loss = 0.0;
    let mut g = vec![0.0; m * m];
    for i in 0..m {
        let row_w = &weights[i * m..(i + 1) * m];
        let r: f64 = row_w.iter().sum();
        if r == 0.0 {
            continue;
        }
        for j in 0..m {
            if row_w[j] != 0.0 {
                loss += row_w[j] * lg.term(i, j);
            }
        }
        for k in 0..m {
            if k == i {
                continue;
            }
            let p = libm::exp(lg.logits[i * m + k] - lg.log_norm[i]);
            g[i * m + k] = r * p - row_w[k];
        }
    }
    let inv_t = 1.0 / set.temperature;
    let mut grad = vec![0.0; m * d];
    for i in 0..m {
        let mut gu = vec![0.0; d];
        for k in 0..m {
            let c = (g[i * m + k] + g[k * m + i]) * inv_t;
            if c != 0.0 {
                let uk = &lg.unit[k * d..(k + 1) * d];
                gu.iter_mut().zip(uk).for_each(|(a, b)| *a += c * b);
            }
        }
        let ui = &lg.unit[i * d..(i + 1) * d];
        let radial: f64 = gu.iter().zip(ui).map(|(a, b)| a * b).sum();
        let out = &mut grad[i * d..(i + 1) * d];
        for ((o, gv), uv) in out.iter_mut().zip(&gu).zip(ui) {
            *o = (gv - radial * uv) / lg.norms[i];
        }
    }
    LossGrad { loss, grad }
}

/// Instance-discrimination loss of anchor `i` against positive `j`, with all
/// other members of `set` in the denominator.
pub fn instance_discrimination(i: usize, j: usize, set: &ProjectionSet) -> Result<f64> {
    let m = set.len();
    if i >= m || j >= m {
        return Err(Error::InvalidProjectionSet(format!("index out of range for {m} vectors")));
    }
    if i == j {
        return Err(Error::InvalidProjectionSet("anchor and positive must differ".into()));
    }
    Ok(Logits::new(set).term(i, j))
}

fn group_counts(keys: &[usize]) -> BTreeMap<usize, usize> {
    let mut counts = BTreeMap::new();
    for &k in keys {
        *counts.entry(k).or_insert(0) += 1;
    }
    counts
}

/// Weight matrix putting `w(i)` on every ordered pair `i ≠ j` with equal keys.
fn same_key_weights(keys: &[usize], w: impl Fn(usize) -> f64) -> Vec<f64> {
    let m = keys.len();
    let mut weights = vec![0.0; m * m];
    for i in 0..m {
        let wi = w(i);
        for j in 0..m {
            if i != j && keys[i] == keys[j] {
                weights[i * m + j] = wi;
            }
        }
    }
    weights
}

/// Checks `C ≥ 2` contiguous context labels `0..C` with equal, even group
/// sizes `2N`. Returns `(C, 2N)`.
fn balanced_contexts(set: &ProjectionSet, expected_contexts: Option<usize>) -> Result<(usize, usize)> {
    let counts = group_counts(&set.labels);
    let contexts = counts.len();
    if contexts < 2 || counts.keys().copied().ne(0..contexts) {
        return Err(Error::InvalidProjectionSet(format!(
            "context labels must be 0..C with C >= 2, got {:?}",
            counts.keys().collect::<Vec<_>>()
        )));
    }
    if let Some(c) = expected_contexts {
        if contexts != c {
            return Err(Error::InvalidProjectionSet(format!("expected {c} contexts, got {contexts}")));
        }
    }
    let group = counts[&0];
    if counts.values().any(|&n| n != group) || group % 2 != 0 || group == 0 {
        return Err(Error::InvalidProjectionSet(format!(
            "context groups must all have the same even size 2N, got {:?}",
            counts.values().collect::<Vec<_>>()
        )));
    }
    Ok((contexts, group))
}

fn context_weights(set: &ProjectionSet, expected_contexts: Option<usize>) -> Result<Vec<f64>> {
    let (contexts, group) = balanced_contexts(set, expected_contexts)?;
    // Ordered same-context pairs: C groups of 2N(2N - 1); for C = 2 this is 4N(2N - 1).
    let pairs = (contexts * group * (group - 1)) as f64;
    Ok(same_key_weights(&set.labels, |_| 1.0 / pairs))
}

fn content_weights(set: &ProjectionSet) -> Result<Vec<f64>> {
    let m = set.len();
    if m % 4 != 0 {
        return Err(Error::InvalidProjectionSet(format!("content alignment needs 4N vectors, got {m}")));
    }
    if let Some((id, n)) = group_counts(&set.ids).into_iter().find(|&(_, n)| n != 4) {
        return Err(Error::InvalidProjectionSet(format!("base id {id} appears {n} times, expected 4")));
    }
    let n = (m / 4) as f64;
    Ok(same_key_weights(&set.ids, |_| 1.0 / (12.0 * n)))
}

fn supcon_weights(set: &ProjectionSet) -> Result<Vec<f64>> {
    let counts = group_counts(&set.labels);
    if let Some((label, _)) = counts.iter().find(|&(_, &n)| n < 2) {
        return Err(Error::InvalidProjectionSet(format!("label {label} has a single member")));
    }
    Ok(same_key_weights(&set.labels, |i| 1.0 / (counts[&set.labels[i]] - 1) as f64))
}

fn simclr_weights(set: &ProjectionSet) -> Result<Vec<f64>> {
    if let Some((id, n)) = group_counts(&set.ids).into_iter().find(|&(_, n)| n != 2) {
        return Err(Error::InvalidProjectionSet(format!("pair id {id} appears {n} times, expected 2")));
    }
    let two_n = set.len() as f64;
    Ok(same_key_weights(&set.ids, |_| 1.0 / two_n))
}

/// Context contrasting: mean instance discrimination over all ordered
/// same-context pairs of a balanced two-context set of `4N` projections,
/// normalized by `K = 4N(2N - 1)`.
pub fn context_contrast_loss(set: &ProjectionSet) -> Result<f64> {
    Ok(pair_weighted(set, &context_weights(set, Some(2))?))
}

pub fn context_contrast_loss_grad(set: &ProjectionSet) -> Result<LossGrad> {
    Ok(pair_weighted_grad(set, &context_weights(set, Some(2))?))
}

/// Content alignment: for every base sample, instance discrimination over the
/// 12 ordered pairs among its four views (two per context), against the
/// whole set, scaled by `1 / 12N`.
pub fn content_alignment_loss(set: &ProjectionSet) -> Result<f64> {
    Ok(pair_weighted(set, &content_weights(set)?))
}

pub fn content_alignment_loss_grad(set: &ProjectionSet) -> Result<LossGrad> {
    Ok(pair_weighted_grad(set, &content_weights(set)?))
}

/// Supervised contrastive loss: sum over anchors of the mean instance
/// discrimination against every same-label positive.
pub fn supcon_loss(set: &ProjectionSet) -> Result<f64> {
    Ok(pair_weighted(set, &supcon_weights(set)?))
}

pub fn supcon_loss_grad(set: &ProjectionSet) -> Result<LossGrad> {
    Ok(pair_weighted_grad(set, &supcon_weights(set)?))
}

/// SimCLR loss: `2N` projections paired by id, instance discrimination in
/// both directions of every pair, divided by `2N`.
pub fn simclr_loss(set: &ProjectionSet) -> Result<f64> {
    Ok(pair_weighted(set, &simclr_weights(set)?))
}

pub fn simclr_loss_grad(set: &ProjectionSet) -> Result<LossGrad> {
    Ok(pair_weighted_grad(set, &simclr_weights(set)?))
}

/// Context contrasting generalized to `C ≥ 2` contexts of `2N` projections
/// each, normalized by `2NC(2N - 1)`.
pub fn multi_context_contrast_loss(set: &ProjectionSet) -> Result<f64> {
    Ok(pair_weighted(set, &context_weights(set, None)?))
}

pub fn multi_context_contrast_loss_grad(set: &ProjectionSet) -> Result<LossGrad> {
    Ok(pair_weighted_grad(set, &context_weights(set, None)?))
}

fn check_paired(context: &ProjectionSet, content: &ProjectionSet) -> Result<()> {
    if context.len() != content.len() {
        return Err(Error::LengthMismatch(format!(
            "context set has {} projections, content set {}",
            context.len(),
            content.len()
        )));
    }
    if context.labels != content.labels || context.ids != content.ids {
        return Err(Error::InvalidProjectionSet("context and content sets come from different batches".into()));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("alpha must be finite and >= 0, got {alpha}")))
    }
}

/// `L_context(context_set) + α · L_content(content_set)`.
pub fn con2_loss(context_set: &ProjectionSet, content_set: &ProjectionSet, alpha: f64) -> Result<LossValue> {
    check_paired(context_set, content_set)?;
    check_alpha(alpha)?;
    let context = context_contrast_loss(context_set)?;
    let content = content_alignment_loss(content_set)?;
    Ok(LossValue { total: context + alpha * content, context, content, alpha })
}

/// Con² value plus gradients for the context and content projections.
#[derive(Debug, Clone, PartialEq)]
pub struct Con2Grad {
    pub value: LossValue,
    pub context_grad: Vec<f64>,
    pub content_grad: Vec<f64>,
}

pub fn con2_loss_grad(context_set: &ProjectionSet, content_set: &ProjectionSet, alpha: f64) -> Result<Con2Grad> {
    check_paired(context_set, content_set)?;
    check_alpha(alpha)?;
    let context = context_contrast_loss_grad(context_set)?;
    let content = content_alignment_loss_grad(content_set)?;
    let content_grad = content.grad.iter().map(|g| alpha * g).collect();
    Ok(Con2Grad {
        value: LossValue {
            total: context.loss + alpha * content.loss,
            context: context.loss,
            content: content.loss,
            alpha,
        },
        context_grad: context.grad,
        content_grad,
    })
}
