//! Evaluation reports: AUROC per score file, context silhouette, the
//! PCA alignment export and the score-runtime benchmark.

use std::fmt::Write as _;
use std::time::Instant;

use con2_core::augment::ContentTransform;
use con2_core::image::{ContextAugmentation, Image};
use con2_core::metrics::{auroc, pca2, silhouette, Pca2};
use con2_core::scoring::{Encoder, GaussianScoreModel, NndScoreModel, Regularization, TestTimePolicy};
use con2_core::Error;
use plotters::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::artifacts::ScoreFile;
use crate::config::BenchConfig;
use crate::error::{CliError, CliResult};

/// Images per encoder call.
const CHUNK: usize = 256;

fn encode_all<E: Encoder + ?Sized>(encoder: &E, images: &[Image]) -> CliResult<(usize, Vec<f64>)> {
    let mut dim = 0;
    let mut data = Vec::new();
    for chunk in images.chunks(CHUNK) {
        let r = encoder.encode(chunk)?;
        dim = r.dim;
        data.extend(r.data);
    }
    Ok((dim, data))
}

/// Silhouette of `{g(x)} ∪ {g(t_C(x))}` labeled by context, on encoder output.
pub fn context_silhouette<E: Encoder + ?Sized>(
    encoder: &E,
    images: &[Image],
    augmentation: ContextAugmentation,
) -> CliResult<f64> {
    let shifted: Vec<Image> = images.iter().map(|img| augmentation.apply(img)).collect();
    let (dim, mut points) = encode_all(encoder, images)?;
    points.extend(encode_all(encoder, &shifted)?.1);
    let labels: Vec<usize> = (0..2 * images.len()).map(|i| usize::from(i >= images.len())).collect();
    Ok(silhouette(&points, dim, &labels)?)
}

// --------------------------------------------------------------- report

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    /// Score variant, empty for variant-free metrics.
    pub variant: String,
    pub seed: u64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub checkpoint_hash: String,
    pub rows: Vec<MetricRow>,
}

impl EvalReport {
    /// AUROC of every score file, plus the per-variant mean when a variant
    /// was scored under more than one seed.
    pub fn from_score_files(files: &[ScoreFile], config_hash: &str) -> CliResult<Self> {
        let first = files.first().ok_or_else(|| CliError::Config("no score files to evaluate".into()))?;
        let mut rows = Vec::new();
        for f in files {
            if f.config_hash != config_hash {
                return Err(CliError::Config(format!(
                    "score file for {} was produced under config {} but the report is for {config_hash}",
                    f.variant.name(),
                    f.config_hash
                )));
            }
            let labels: Vec<u8> = f
                .labels
                .iter()
                .map(|l| l.ok_or_else(|| CliError::Config("score file has unlabeled rows; AUROC needs labels".into())))
                .collect::<CliResult<_>>()?;
            let value = auroc(&f.scores, &labels).map_err(|e| match e {
                Error::SingleClass { positives, negatives } => CliError::Config(format!(
                    "score file holds a single class ({positives} anomalous, {negatives} normal); AUROC is undefined"
                )),
                other => other.into(),
            })?;
            rows.push(MetricRow { metric: "auroc".into(), variant: f.variant.name().into(), seed: f.seed, value });
        }
        let mut variants: Vec<&str> = files.iter().map(|f| f.variant.name()).collect();
        variants.dedup();
        for v in variants {
            let values: Vec<f64> = rows.iter().filter(|r| r.variant == v).map(|r| r.value).collect();
            if values.len() > 1 {
                let mean = values.iter().sum::<f64>() / values.len() as f64;
                rows.push(MetricRow { metric: "auroc_mean".into(), variant: v.into(), seed: 0, value: mean });
            }
        }
        Ok(Self { config_hash: config_hash.into(), checkpoint_hash: first.checkpoint_hash.clone(), rows })
    }

    pub fn push(&mut self, metric: &str, variant: &str, seed: u64, value: f64) {
        self.rows.push(MetricRow { metric: metric.into(), variant: variant.into(), seed, value });
    }

    /// One row per metric, variant and seed. Holds no timings, so reruns
    /// from the same config give identical bytes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,variant,seed,value,config_hash\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{}", r.metric, r.variant, r.seed, r.value, self.config_hash);
        }
        out
    }

    pub fn value(&self, metric: &str, variant: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.metric == metric && r.variant == variant).map(|r| r.value)
    }
}

// ------------------------------------------------------------ embeddings

pub struct ExportSample {
    pub id: String,
    pub split: String,
    pub anomaly: bool,
    pub image: Image,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub id: String,
    pub context: u8,
    pub split: String,
    pub anomaly: bool,
    pub pc1: f64,
    pub pc2: f64,
}

pub struct EmbeddingExport {
    /// Two rows per sample, original context first.
    pub rows: Vec<EmbeddingRow>,
    pub pca: Pca2,
}

/// Encodes each sample and its context counterpart and projects the pooled
/// set onto its first two principal components.
pub fn pca_alignment_export<E: Encoder + ?Sized>(
    encoder: &E,
    samples: &[ExportSample],
    augmentation: ContextAugmentation,
) -> CliResult<EmbeddingExport> {
    if samples.len() < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: samples.len() }.into());
    }
    let mut views = Vec::with_capacity(2 * samples.len());
    for s in samples {
        views.push(s.image.clone());
        views.push(augmentation.apply(&s.image));
    }
    let (dim, points) = encode_all(encoder, &views)?;
    let pca = pca2(&points, dim)?;
    let rows = pca
        .coordinates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let s = &samples[i / 2];
            EmbeddingRow {
                id: s.id.clone(),
                context: (i % 2) as u8,
                split: s.split.clone(),
                anomaly: s.anomaly,
                pc1: c[0],
                pc2: c[1],
            }
        })
        .collect();
    Ok(EmbeddingExport { rows, pca })
}

impl EmbeddingExport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,context,split,anomaly,pc1,pc2\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{},{}", r.id, r.context, r.split, u8::from(r.anomaly), r.pc1, r.pc2);
        }
        out
    }

    /// Scatter plot with a segment joining each sample's two contexts.
    /// Blue marks the original context, orange the augmented one; anomalies
    /// are drawn hollow. The figure carries no text.
    pub fn to_svg(&self) -> CliResult<String> {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for r in &self.rows {
            x0 = x0.min(r.pc1);
            x1 = x1.max(r.pc1);
            y0 = y0.min(r.pc2);
            y1 = y1.max(r.pc2);
        }
        let pad = |lo: f64, hi: f64| {
            let m = ((hi - lo) * 0.05).max(1e-9);
            (lo - m)..(hi + m)
        };
        let plot_err = |e: &dyn std::fmt::Display| CliError::Numerical(format!("cannot render embedding figure: {e}"));
        let mut svg = String::new();
        {
            let root = SVGBackend::with_string(&mut svg, (640, 640)).into_drawing_area();
            root.fill(&WHITE).map_err(|e| plot_err(&e))?;
            let mut chart = ChartBuilder::on(&root)
                .margin(16)
                .build_cartesian_2d(pad(x0, x1), pad(y0, y1))
                .map_err(|e| plot_err(&e))?;
            let line = RGBColor(160, 160, 160).mix(0.6);
            chart
                .draw_series(self.rows.chunks_exact(2).map(|p| {
                    PathElement::new(vec![(p[0].pc1, p[0].pc2), (p[1].pc1, p[1].pc2)], line.stroke_width(1))
                }))
                .map_err(|e| plot_err(&e))?;
            let colors = [RGBColor(31, 119, 180), RGBColor(255, 127, 14)];
            chart
                .draw_series(self.rows.iter().map(|r| {
                    let color = colors[r.context as usize];
                    let style = if r.anomaly { color.stroke_width(2) } else { color.filled() };
                    Circle::new((r.pc1, r.pc2), 4, style)
                }))
                .map_err(|e| plot_err(&e))?;
            root.present().map_err(|e| plot_err(&e))?;
        }
        Ok(svg)
    }
}

// ------------------------------------------------------------- benchmark

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub dim: usize,
    pub nnd_fit_seconds: f64,
    pub lh_fit_seconds: f64,
    /// Median over repeats of the mean per-query time.
    pub nnd_query_seconds: f64,
    pub lh_query_seconds: f64,
}

fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<f64> {
    (0..n * dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn time_queries(queries: &[f64], dim: usize, repeats: usize, score: impl Fn(&[f64]) -> f64) -> f64 {
    let count = queries.len() / dim;
    let samples = (0..repeats)
        .map(|_| {
            let start = Instant::now();
            let mut acc = 0.0;
            for q in queries.chunks_exact(dim) {
                acc += score(q);
            }
            std::hint::black_box(acc);
            start.elapsed().as_secs_f64() / count as f64
        })
        .collect();
    median(samples)
}

/// Fits both score models on `n` synthetic Gaussian representations for
/// every configured `n` and times per-query scoring of a fixed batch.
pub fn bench_scores(config: &BenchConfig, regularization: Regularization) -> CliResult<Vec<BenchRow>> {
    let dim = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let queries = gaussian_rows(&mut rng, config.queries, dim);
    let policy = TestTimePolicy::from_transforms(vec![ContentTransform::identity(1); 2], ContextAugmentation::Invert)?;
    let mut rows = Vec::with_capacity(config.sizes.len());
    for &n in &config.sizes {
        let keys = gaussian_rows(&mut rng, n, dim);

        let start = Instant::now();
        let nnd = NndScoreModel::from_keys(policy.clone(), dim, vec![keys.clone(), keys.clone()])?;
        let nnd_fit_seconds = start.elapsed().as_secs_f64();

        let start = Instant::now();
        let lh = GaussianScoreModel::from_representations(policy.clone(), dim, &[keys.clone(), keys], regularization)?;
        let lh_fit_seconds = start.elapsed().as_secs_f64();

        let nnd_query_seconds =
            time_queries(&queries, dim, config.repeats, |q| nnd.score_representation(0, q).unwrap_or(f64::NAN));
        let lh_query_seconds =
            time_queries(&queries, dim, config.repeats, |q| lh.score_representation(0, q).unwrap_or(f64::NAN));
        rows.push(BenchRow { n, dim, nnd_fit_seconds, lh_fit_seconds, nnd_query_seconds, lh_query_seconds });
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("n,dim,nnd_fit_seconds,lh_fit_seconds,nnd_query_seconds,lh_query_seconds\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.n, r.dim, r.nnd_fit_seconds, r.lh_fit_seconds, r.nnd_query_seconds, r.lh_query_seconds
        );
    }
    out
}

/// Per-query time ratios `(nnd, lh)` between the largest and smallest `n`.
pub fn bench_ratios(rows: &[BenchRow]) -> Option<(f64, f64)> {
    let (first, last) = (rows.first()?, rows.last()?);
    Some((last.nnd_query_seconds / first.nnd_query_seconds, last.lh_query_seconds / first.lh_query_seconds))
}
