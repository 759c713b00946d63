//! AUROC, silhouette and a two-component PCA.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Mann–Whitney AUROC with midranks: `P(anomaly > normal) + ½ P(tie)`.
/// Label 1 marks an anomaly.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidConfig("scores contain NaN".into()));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass { positives, negatives });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of the positives keeps every quantity an integer.
    let mut twice_rank_sum: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let twice_rank = (start + 1 + end) as u128;
        let pos_in_group = order[start..end].iter().filter(|&&i| labels[i] == 1).count() as u128;
        twice_rank_sum += twice_rank * pos_in_group;
        start = end;
    }
    let p = positives as u128;
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok((twice_u as f64 / 2.0) / (positives as f64 * negatives as f64))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean silhouette coefficient under cosine distance.
pub fn silhouette(points: &[f64], dim: usize, labels: &[usize]) -> Result<f64> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(Error::LengthMismatch(format!("{} values do not form rows of width {dim}", points.len())));
    }
    let n = points.len() / dim;
    if labels.len() != n {
        return Err(Error::LengthMismatch(format!("{} labels for {n} points", labels.len())));
    }
    let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *sizes.entry(l).or_default() += 1;
    }
    if let Some((&label, _)) = sizes.iter().find(|(_, &c)| c < 2) {
        return Err(Error::SingletonCluster { label });
    }
    if sizes.len() < 2 {
        return Err(Error::InvalidConfig("silhouette needs at least two clusters".into()));
    }
    let rows: Vec<&[f64]> = points.chunks_exact(dim).collect();
    let norms: Vec<f64> = rows.iter().map(|r| libm::sqrt(dot(r, r))).collect();
    if norms.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidProjectionSet("zero or non-finite point".into()));
    }
    let clusters: Vec<usize> = sizes.keys().copied().collect();
    let slot = |l: usize| clusters.binary_search(&l).unwrap_or(0);
    let mut total = 0.0;
    let mut sums = vec![0.0; clusters.len()];
    let mut counts = vec![0usize; clusters.len()];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        counts.iter_mut().for_each(|c| *c = 0);
        for j in 0..n {
            if j == i {
                continue;
            }
            let c = slot(labels[j]);
            sums[c] += 1.0 - dot(rows[i], rows[j]) / (norms[i] * norms[j]);
            counts[c] += 1;
        }
        let own = slot(labels[i]);
        let a = sums[own] / counts[own] as f64;
        let mut b = f64::INFINITY;
        for c in 0..clusters.len() {
            if c != own {
                b = b.min(sums[c] / counts[c] as f64);
            }
        }
        let m = a.max(b);
        total += if m > 0.0 { (b - a) / m } else { 0.0 };
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca2 {
    pub mean: Vec<f64>,
    /// Two unit components, each with its largest-magnitude loading positive.
    pub components: [Vec<f64>; 2],
    pub explained_variance: [f64; 2],
    /// Share of total variance captured by the two components.
    pub explained_ratio: f64,
    /// `n × 2` projected coordinates.
    pub coordinates: Vec<[f64; 2]>,
}

/// Two-component PCA of `n × dim` row-major data.
pub fn pca2(points: &[f64], dim: usize) -> Result<Pca2> {
    if dim < 2 || points.len() % dim != 0 {
        return Err(Error::LengthMismatch(format!("{} values do not form rows of width {dim} >= 2", points.len())));
    }
    let n = points.len() / dim;
    if n < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: n });
    }
    let mut mean = vec![0.0; dim];
    for row in points.chunks_exact(dim) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, dim, |i, j| points[i * dim + j] - mean[j]);
    let cov = (centered.transpose() * &centered) / (n - 1) as f64;
    let eigen = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[b].total_cmp(&eigen.eigenvalues[a]).then(a.cmp(&b)));
    let component = |k: usize| -> Vec<f64> {
        let col: Vec<f64> = eigen.eigenvectors.column(order[k]).iter().copied().collect();
        let lead = (0..dim).fold(0, |best, i| if col[i].abs() > col[best].abs() { i } else { best });
        let sign = if col[lead] < 0.0 { -1.0 } else { 1.0 };
        col.into_iter().map(|v| v * sign).collect()
    };
    let components = [component(0), component(1)];
    let total: f64 = eigen.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let explained_variance = [eigen.eigenvalues[order[0]].max(0.0), eigen.eigenvalues[order[1]].max(0.0)];
    let explained_ratio = if total > 0.0 { (explained_variance[0] + explained_variance[1]) / total } else { 1.0 };
    let coordinates = (0..n)
        .map(|i| {
            let row = centered.row(i);
            let project = |c: &[f64]| row.iter().zip(c).map(|(x, y)| x * y).sum::<f64>();
            [project(&components[0]), project(&components[1])]
        })
        .collect();
    Ok(Pca2 { mean, components, explained_variance, explained_ratio, coordinates })
}
