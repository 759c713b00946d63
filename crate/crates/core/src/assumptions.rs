//! Model-free heuristics for whether a context augmentation is usable:
//! distinctiveness (original and augmented samples do not mix) and
//! alignment (pairwise distances survive the augmentation).
//!
//! Both are advisory surrogates computed in pixel space.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ContextAugmentation, Image};

pub const DEFAULT_NEIGHBORS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub augmentation: String,
    pub distance: String,
    /// Fraction of pooled points with a cross-context point among their k
    /// nearest neighbors; 0 means perfectly distinct.
    pub distinctiveness: Option<f64>,
    /// Spearman correlation of pairwise distances before and after the
    /// augmentation; 1 means perfectly aligned.
    pub alignment: Option<f64>,
    pub samples: usize,
    pub neighbors: Option<usize>,
}

pub fn check_distinctiveness(samples: &[Image], augmentation: ContextAugmentation, k: usize) -> Result<AssumptionReport> {
    check_distinctiveness_with(samples, augmentation.name(), |img| augmentation.apply(img), k)
}

/// Distinctiveness of an arbitrary transform, labeled `name` in the report.
pub fn check_distinctiveness_with(
    samples: &[Image],
    name: &str,
    transform: impl Fn(&Image) -> Image,
    k: usize,
) -> Result<AssumptionReport> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if samples.len() < k + 1 {
        return Err(Error::TooFewSamples { needed: k + 1, got: samples.len() });
    }
    let n = samples.len();
    let mut pooled: Vec<Vec<f64>> = samples.iter().map(flatten).collect();
    pooled.extend(samples.iter().map(|s| flatten(&transform(s))));
    let norms: Vec<f64> = pooled.iter().map(|v| libm::sqrt(dot(v, v))).collect();
    let cosine_distance = |a: usize, b: usize| {
        let denom = norms[a] * norms[b];
        if denom == 0.0 {
            1.0
        } else {
            1.0 - dot(&pooled[a], &pooled[b]) / denom
        }
    };

    let total = pooled.len();
    let mut confused = 0usize;
    let mut neighbors: Vec<(f64, usize)> = Vec::with_capacity(total - 1);
    for i in 0..total {
        neighbors.clear();
        neighbors.extend((0..total).filter(|&j| j != i).map(|j| (cosine_distance(i, j), j)));
        neighbors.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let own_context = i >= n;
        if neighbors[..k].iter().any(|&(_, j)| (j >= n) != own_context) {
            confused += 1;
        }
    }
    Ok(AssumptionReport {
        augmentation: name.to_string(),
        distance: "cosine".to_string(),
        distinctiveness: Some(confused as f64 / total as f64),
        alignment: None,
        samples: n,
        neighbors: Some(k),
    })
}

pub fn check_alignment(samples: &[Image], augmentation: ContextAugmentation) -> Result<AssumptionReport> {
    check_alignment_with(samples, augmentation.name(), |img| augmentation.apply(img))
}

/// Spearman correlation between all pairwise Euclidean pixel distances
/// before and after `transform`.
///
/// Distances are ranked by their exact squared value on the image's
/// fixed-point pixel grid, so any pixel permutation or pixel-wise isometry
/// yields exactly 1.
pub fn check_alignment_with(
    samples: &[Image],
    name: &str,
    transform: impl Fn(&Image) -> Image,
) -> Result<AssumptionReport> {
    if samples.len() < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: samples.len() });
    }
    let before: Vec<Vec<i64>> = samples.iter().map(fixed_point).collect();
    let after: Vec<Vec<i64>> = samples.iter().map(|s| fixed_point(&transform(s))).collect();
    let mut d_before = Vec::new();
    let mut d_after = Vec::new();
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            d_before.push(squared_distance(&before[i], &before[j]));
            d_after.push(squared_distance(&after[i], &after[j]));
        }
    }
    let rho = pearson(&midranks(&d_before), &midranks(&d_after));
    Ok(AssumptionReport {
        augmentation: name.to_string(),
        distance: "euclidean".to_string(),
        distinctiveness: None,
        alignment: Some(rho),
        samples: samples.len(),
        neighbors: None,
    })
}

fn flatten(img: &Image) -> Vec<f64> {
    img.pixels().iter().map(|&p| p as f64).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn fixed_point(img: &Image) -> Vec<i64> {
    img.pixels().iter().map(|&p| libm::round(p as f64 * 16_777_216.0) as i64).collect()
}

fn squared_distance(a: &[i64], b: &[i64]) -> u128 {
    a.iter().zip(b).map(|(x, y)| ((x - y) as i128 * (x - y) as i128) as u128).sum()
}

/// Ranks starting at 1, ties sharing their mean rank.
fn midranks<T: Ord>(values: &[T]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].cmp(&values[b]));
    let mut ranks = alloc::vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        // Constant distances on either side carry no rank information.
        return if sxx == syy { 1.0 } else { 0.0 };
    }
    sxy / libm::sqrt(sxx * syy)
}
