//! Brute-force reference implementations used only by tests.
//!
//! These follow the textbook definitions literally (explicit loops, no
//! log-sum-exp shifting, no shared helpers with the library) so they stay
//! independent of the code they check.

#![allow(dead_code)]

use std::collections::BTreeMap;

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// `-log( exp(sim(z_i,z_j)/τ) / Σ_{k≠i} exp(sim(z_i,z_k)/τ) )`.
pub fn ell(vectors: &[Vec<f64>], i: usize, j: usize, tau: f64) -> f64 {
    let num = (cosine(&vectors[i], &vectors[j]) / tau).exp();
    let mut den = 0.0;
    for k in 0..vectors.len() {
        if k != i {
            den += (cosine(&vectors[i], &vectors[k]) / tau).exp();
        }
    }
    -(num / den).ln()
}

pub fn context_contrast(vectors: &[Vec<f64>], labels: &[usize], tau: f64) -> f64 {
    let four_n = vectors.len();
    let n = four_n / 4;
    let k = (4 * n * (2 * n - 1)) as f64;
    let mut sum = 0.0;
    for i in 0..four_n {
        for j in 0..four_n {
            if i != j && labels[i] == labels[j] {
                sum += ell(vectors, i, j, tau);
            }
        }
    }
    sum / k
}

pub fn content_alignment(vectors: &[Vec<f64>], ids: &[usize], tau: f64) -> f64 {
    let n = vectors.len() / 4;
    let mut distinct: Vec<usize> = ids.to_vec();
    distinct.sort();
    distinct.dedup();
    let mut sum = 0.0;
    for &x in &distinct {
        let members: Vec<usize> = (0..ids.len()).filter(|&i| ids[i] == x).collect();
        for &a in &members {
            for &b in &members {
                if a != b {
                    sum += ell(vectors, a, b, tau);
                }
            }
        }
    }
    sum / (12 * n) as f64
}

pub fn supcon(vectors: &[Vec<f64>], labels: &[usize], tau: f64) -> f64 {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let mut total = 0.0;
    for i in 0..vectors.len() {
        let mut inner = 0.0;
        for j in 0..vectors.len() {
            if j != i && labels[j] == labels[i] {
                inner += ell(vectors, i, j, tau);
            }
        }
        total += inner / (counts[&labels[i]] - 1) as f64;
    }
    total
}

pub fn simclr(vectors: &[Vec<f64>], ids: &[usize], tau: f64) -> f64 {
    let two_n = vectors.len();
    let mut total = 0.0;
    for i in 0..two_n {
        for j in 0..two_n {
            if i != j && ids[i] == ids[j] {
                total += ell(vectors, i, j, tau);
            }
        }
    }
    total / two_n as f64
}

pub fn multi_context(vectors: &[Vec<f64>], labels: &[usize], tau: f64) -> f64 {
    let contexts = labels.iter().max().unwrap() + 1;
    let two_n = vectors.len() / contexts;
    let norm = (two_n * contexts * (two_n - 1)) as f64;
    let mut sum = 0.0;
    for i in 0..vectors.len() {
        for j in 0..vectors.len() {
            if i != j && labels[i] == labels[j] {
                sum += ell(vectors, i, j, tau);
            }
        }
    }
    sum / norm
}

/// AUROC by counting every (anomaly, normal) pair, with half credit for ties.
pub fn auroc_pairs(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Dense Gauss-Jordan inverse with partial pivoting.
pub fn invert(matrix: &[f64], n: usize) -> Vec<f64> {
    let mut a = matrix.to_vec();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        let pivot = (col..n).max_by(|&r, &s| a[r * n + col].abs().total_cmp(&a[s * n + col].abs())).unwrap();
        for k in 0..n {
            a.swap(col * n + k, pivot * n + k);
            inv.swap(col * n + k, pivot * n + k);
        }
        let p = a[col * n + col];
        for k in 0..n {
            a[col * n + k] /= p;
            inv[col * n + k] /= p;
        }
        for r in 0..n {
            if r != col {
                let f = a[r * n + col];
                for k in 0..n {
                    a[r * n + k] -= f * a[col * n + k];
                    inv[r * n + k] -= f * inv[col * n + k];
                }
            }
        }
    }
    inv
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn determinant(matrix: &[f64], n: usize) -> f64 {
    let mut a = matrix.to_vec();
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n).max_by(|&r, &s| a[r * n + col].abs().total_cmp(&a[s * n + col].abs())).unwrap();
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            det = -det;
        }
        let p = a[col * n + col];
        det *= p;
        for r in col + 1..n {
            let f = a[r * n + col] / p;
            for k in col..n {
                a[r * n + k] -= f * a[col * n + k];
            }
        }
    }
    det
}

/// `-log N(z | μ, Σ)` by explicit inverse and determinant.
pub fn gaussian_nll(z: &[f64], mean: &[f64], cov: &[f64]) -> f64 {
    let d = z.len();
    let inv = invert(cov, d);
    let diff: Vec<f64> = z.iter().zip(mean).map(|(a, b)| a - b).collect();
    let mut quad = 0.0;
    for r in 0..d {
        for c in 0..d {
            quad += diff[r] * inv[r * d + c] * diff[c];
        }
    }
    let det = determinant(cov, d);
    0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + det.ln() + quad)
}

/// Silhouette with cosine distance, one point at a time.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let dist = |a: &[f64], b: &[f64]| 1.0 - cosine(a, b);
    let mut clusters: Vec<usize> = labels.to_vec();
    clusters.sort();
    clusters.dedup();
    let mut total = 0.0;
    for i in 0..points.len() {
        let mut own_sum = 0.0;
        let mut own_n = 0usize;
        for j in 0..points.len() {
            if j != i && labels[j] == labels[i] {
                own_sum += dist(&points[i], &points[j]);
                own_n += 1;
            }
        }
        let a = own_sum / own_n as f64;
        let mut b = f64::INFINITY;
        for &c in &clusters {
            if c == labels[i] {
                continue;
            }
            let mut s = 0.0;
            let mut n = 0usize;
            for j in 0..points.len() {
                if labels[j] == c {
                    s += dist(&points[i], &points[j]);
                    n += 1;
                }
            }
            b = b.min(s / n as f64);
        }
        let m = a.max(b);
        total += if m > 0.0 { (b - a) / m } else { 0.0 };
    }
    total / points.len() as f64
}

/// Central finite differences of `f` at `x`.
pub fn finite_difference(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let plus = f(&probe);
            probe[i] = orig - step;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

pub fn rows(flat: &[f64], dim: usize) -> Vec<Vec<f64>> {
    flat.chunks(dim).map(|r| r.to_vec()).collect()
}
