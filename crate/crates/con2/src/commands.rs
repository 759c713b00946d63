//! The pipeline verbs. Each reads a run config, works inside the run
//! directory and prints one `name = value` line per output.

use std::path::{Path, PathBuf};

use con2_core::assumptions::{check_alignment, check_distinctiveness, AssumptionReport, DEFAULT_NEIGHBORS};
use con2_core::image::ContextAugmentation;
use con2_core::scoring::{ScoreModel, ScoreVariant, TestTimePolicy};
use con2_core::trainer::{train_with_progress, Checkpoint};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::artifacts::{
    history_csv, load_checkpoint, save_checkpoint, save_score_model, write_atomic, CheckpointManifest, ScoreFile,
};
use crate::config::{hex, RunConfig};
use crate::error::{CliError, CliResult};
use crate::evaluation::{
    bench_csv, bench_ratios, bench_scores, context_silhouette, pca_alignment_export, EvalReport, ExportSample,
};
use crate::imageio::{load_split, LoadedSplit};

/// Environment variable naming the directory that holds run directories.
pub const ARTIFACT_ROOT_ENV: &str = "CON2_ARTIFACT_ROOT";
const DEFAULT_ARTIFACT_ROOT: &str = "artifacts";

/// File layout of one run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    /// `out` when given, otherwise `$CON2_ARTIFACT_ROOT/<config name>`.
    pub fn resolve(config: &RunConfig, out: Option<&Path>) -> Self {
        let root = match out {
            Some(p) => p.to_path_buf(),
            None => {
                let base = std::env::var_os(ARTIFACT_ROOT_ENV).map_or_else(|| PathBuf::from(DEFAULT_ARTIFACT_ROOT), PathBuf::from);
                base.join(&config.name)
            }
        };
        Self { root }
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("checkpoint")
    }

    pub fn history(&self) -> PathBuf {
        self.root.join("loss_history.csv")
    }

    pub fn scores(&self, variant: ScoreVariant) -> PathBuf {
        self.root.join(format!("scores_{}.csv", variant.name()))
    }

    pub fn score_model(&self, variant: ScoreVariant) -> PathBuf {
        self.root.join(format!("score_model_{}", variant.name()))
    }

    pub fn report_csv(&self) -> PathBuf {
        self.root.join("eval").join("report.csv")
    }

    pub fn report_manifest(&self) -> PathBuf {
        self.root.join("eval").join("report.json")
    }

    pub fn embeddings_csv(&self) -> PathBuf {
        self.root.join("embeddings.csv")
    }

    pub fn embeddings_svg(&self) -> PathBuf {
        self.root.join("embeddings.svg")
    }

    pub fn bench(&self) -> PathBuf {
        self.root.join("bench_scores.csv")
    }

    pub fn context_report(&self) -> PathBuf {
        self.root.join("context_report.json")
    }
}

fn summary(name: &str, value: impl std::fmt::Display) {
    println!("{name} = {value}");
}

fn json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("report serializes");
    v.push(b'\n');
    v
}

/// Loads the run's checkpoint and checks it was trained under the same
/// dataset, model and training sections as `config`.
fn open_checkpoint(config: &RunConfig, paths: &RunPaths) -> CliResult<(Checkpoint, CheckpointManifest)> {
    let (checkpoint, manifest) = load_checkpoint(&paths.checkpoint())?;
    let trained = &manifest.config;
    for (section, same) in [
        ("dataset", trained.dataset == config.dataset),
        ("model", trained.model == config.model),
        ("train", trained.train == config.train),
    ] {
        if !same {
            return Err(CliError::Config(format!(
                "{section}: differs from the config the checkpoint at {} was trained with",
                paths.checkpoint().display()
            )));
        }
    }
    Ok((checkpoint, manifest))
}

// ----------------------------------------------------------------- train

pub fn cmd_train(config_path: &Path, out: Option<&Path>, quiet: bool) -> CliResult<PathBuf> {
    let config = RunConfig::load(config_path)?;
    let paths = RunPaths::resolve(&config, out);
    let LoadedSplit { split, .. } = load_split(&config)?;
    let total = config.train.total_steps(split.train.len());
    let every = (total / 20).max(1);
    let checkpoint = train_with_progress(&config.model, &config.train, &split, |r| {
        if !quiet && (r.step % every == 0 || r.step + 1 == total) {
            eprintln!(
                "step {:>6}/{total}  loss {:.5}  context {:.5}  content {:.5}  alpha {:.3}  lr {:.2e}",
                r.step + 1,
                r.total,
                r.context,
                r.content,
                r.alpha,
                r.learning_rate
            );
        }
    })?;
    let hash = config.hash();
    save_checkpoint(&paths.checkpoint(), &checkpoint, &config)?;
    write_atomic(&paths.history(), history_csv(&checkpoint.history, &hash).as_bytes())?;
    summary("checkpoint", paths.checkpoint().display());
    summary("steps", checkpoint.step);
    if let Some(last) = checkpoint.history.last() {
        summary("final_loss", last.total);
    }
    Ok(paths.checkpoint())
}

// ----------------------------------------------------------------- score

#[derive(Debug, Clone, Default)]
pub struct ScoreOptions {
    /// Score only this variant instead of every configured one.
    pub variant: Option<ScoreVariant>,
    /// Overrides `scoring.test_time_augmentations`.
    pub test_time_augmentations: Option<usize>,
    pub seed: Option<u64>,
}

pub fn cmd_score(config_path: &Path, out: Option<&Path>, options: &ScoreOptions) -> CliResult<Vec<PathBuf>> {
    let mut config = RunConfig::load(config_path)?;
    let hash = config.hash();
    if let Some(a) = options.test_time_augmentations {
        config.scoring.test_time_augmentations = a;
    }
    if let Some(seed) = options.seed {
        config.scoring.seed = seed;
    }
    config.validate_static()?;
    let paths = RunPaths::resolve(&config, out);
    let (checkpoint, manifest) = open_checkpoint(&config, &paths)?;
    let loaded = load_split(&config)?;
    let a = config.scoring.test_time_augmentations;
    let policy =
        TestTimePolicy::sample(a, config.test_time_policy(), config.train.augmentation, config.scoring.seed)?;
    let variants = options.variant.map_or_else(|| config.scoring.variants.clone(), |v| vec![v]);
    let mut written = Vec::new();
    for variant in variants {
        let model = ScoreModel::fit(variant, &checkpoint, &loaded.split.train, &policy, config.scoring.regularization)?;
        let scores = model.final_scores(&checkpoint, &loaded.split.test, &policy)?;
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(CliError::Numerical(format!("{} score of {} is not finite", variant.name(), loaded.test_ids[i])));
        }
        let file = ScoreFile {
            variant,
            config_hash: hash.clone(),
            checkpoint_hash: manifest.params_sha256.clone(),
            seed: config.scoring.seed,
            test_time_augmentations: a,
            ids: loaded.test_ids.clone(),
            scores,
            labels: loaded.split.test_labels.iter().map(|&l| Some(l)).collect(),
        };
        save_score_model(&paths.score_model(variant), &model, &hash, &manifest.params_sha256)?;
        let path = paths.scores(variant);
        write_atomic(&path, file.to_csv().as_bytes())?;
        summary(&format!("scores[{}]", variant.name()), path.display());
        written.push(path);
    }
    Ok(written)
}

// ------------------------------------------------------------------ eval

#[derive(Serialize)]
struct ScoreFileEntry {
    file: String,
    sha256: String,
    variant: ScoreVariant,
    seed: u64,
    test_time_augmentations: usize,
    rows: usize,
}

#[derive(Serialize)]
struct ReportManifest<'a> {
    format: &'static str,
    format_version: u32,
    config_hash: &'a str,
    checkpoint_hash: &'a str,
    train_seed: u64,
    score_files: Vec<ScoreFileEntry>,
    report: &'static str,
    rows: &'a [crate::evaluation::MetricRow],
}

/// AUROC of each score file (defaults: the run's configured variants), and
/// the context silhouette of the test split when enabled.
pub fn cmd_eval(config_path: &Path, out: Option<&Path>, score_files: &[PathBuf]) -> CliResult<EvalReport> {
    let config = RunConfig::load(config_path)?;
    let paths = RunPaths::resolve(&config, out);
    let hash = config.hash();
    let files: Vec<PathBuf> = if score_files.is_empty() {
        config.scoring.variants.iter().map(|&v| paths.scores(v)).collect()
    } else {
        score_files.to_vec()
    };
    let mut parsed = Vec::with_capacity(files.len());
    let mut entries = Vec::with_capacity(files.len());
    for f in &files {
        let bytes = std::fs::read(f).map_err(|e| CliError::io(f, e))?;
        let score = ScoreFile::read(f)?;
        entries.push(ScoreFileEntry {
            file: f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            sha256: hex(&Sha256::digest(&bytes)),
            variant: score.variant,
            seed: score.seed,
            test_time_augmentations: score.test_time_augmentations,
            rows: score.ids.len(),
        });
        parsed.push(score);
    }
    let mut report = EvalReport::from_score_files(&parsed, &hash)?;
    if config.eval.silhouette {
        let (checkpoint, manifest) = open_checkpoint(&config, &paths)?;
        if manifest.params_sha256 != report.checkpoint_hash {
            return Err(CliError::Config(format!(
                "score files were produced by checkpoint {} but the run holds {}",
                report.checkpoint_hash, manifest.params_sha256
            )));
        }
        let loaded = load_split(&config)?;
        let s = context_silhouette(&checkpoint, &loaded.split.test, config.train.augmentation)?;
        report.push("silhouette", "", config.train.seed, s);
    }
    write_atomic(&paths.report_csv(), report.to_csv().as_bytes())?;
    let manifest = ReportManifest {
        format: "con2-eval-report",
        format_version: 1,
        config_hash: &hash,
        checkpoint_hash: &report.checkpoint_hash,
        train_seed: config.train.seed,
        score_files: entries,
        report: "report.csv",
        rows: &report.rows,
    };
    write_atomic(&paths.report_manifest(), &json(&manifest))?;
    for r in &report.rows {
        if r.variant.is_empty() {
            summary(&r.metric, r.value);
        } else {
            summary(&format!("{}[{}]", r.metric, r.variant), r.value);
        }
    }
    Ok(report)
}

// ------------------------------------------------------ validate-context

#[derive(Serialize)]
struct ContextReport<'a> {
    config_hash: &'a str,
    distinctiveness: &'a AssumptionReport,
    alignment: &'a AssumptionReport,
}

/// Distinctiveness and alignment of a context augmentation over the first
/// `samples` training images.
pub fn cmd_validate_context(
    config_path: &Path,
    out: Option<&Path>,
    augmentation: Option<ContextAugmentation>,
    samples: usize,
) -> CliResult<(AssumptionReport, AssumptionReport)> {
    let config = RunConfig::load(config_path)?;
    let paths = RunPaths::resolve(&config, out);
    let augmentation = augmentation.unwrap_or(config.train.augmentation);
    let loaded = load_split(&config)?;
    let train = &loaded.split.train[..samples.min(loaded.split.train.len())];
    let distinct = check_distinctiveness(train, augmentation, DEFAULT_NEIGHBORS)?;
    let aligned = check_alignment(train, augmentation)?;
    let hash = config.hash();
    let report = ContextReport { config_hash: &hash, distinctiveness: &distinct, alignment: &aligned };
    write_atomic(&paths.context_report(), &json(&report))?;
    summary("augmentation", augmentation.name());
    if let Some(d) = distinct.distinctiveness {
        summary("distinctiveness", d);
    }
    if let Some(a) = aligned.alignment {
        summary("alignment", a);
    }
    Ok((distinct, aligned))
}

// ---------------------------------------------------------- bench-scores

pub fn cmd_bench_scores(config_path: &Path, out: Option<&Path>) -> CliResult<PathBuf> {
    let config = RunConfig::load(config_path)?;
    let paths = RunPaths::resolve(&config, out);
    let rows = bench_scores(&config.eval.bench, config.scoring.regularization)?;
    let mut text = format!("# config_hash={}\n# seed={}\n", config.hash(), config.eval.bench.seed);
    text.push_str(&bench_csv(&rows));
    write_atomic(&paths.bench(), text.as_bytes())?;
    for r in &rows {
        summary(&format!("nnd_query_seconds[n={}]", r.n), r.nnd_query_seconds);
        summary(&format!("lh_query_seconds[n={}]", r.n), r.lh_query_seconds);
    }
    if let Some((nnd, lh)) = bench_ratios(&rows) {
        summary("nnd_query_ratio", nnd);
        summary("lh_query_ratio", lh);
    }
    Ok(paths.bench())
}

// ----------------------------------------------------- export-embeddings

/// PCA alignment export over the whole test split plus the first
/// `eval.embedding_train_samples` training images.
pub fn cmd_export_embeddings(config_path: &Path, out: Option<&Path>) -> CliResult<PathBuf> {
    let config = RunConfig::load(config_path)?;
    let paths = RunPaths::resolve(&config, out);
    let (checkpoint, _) = open_checkpoint(&config, &paths)?;
    let loaded = load_split(&config)?;
    let split = &loaded.split;
    let mut samples: Vec<ExportSample> = split
        .test
        .iter()
        .zip(&split.test_labels)
        .zip(&loaded.test_ids)
        .map(|((img, &l), id)| ExportSample { id: id.clone(), split: "test".into(), anomaly: l == 1, image: img.clone() })
        .collect();
    let take = config.eval.embedding_train_samples.min(split.train.len());
    samples.extend(split.train[..take].iter().zip(&loaded.train_ids).map(|(img, id)| ExportSample {
        id: id.clone(),
        split: "train".into(),
        anomaly: false,
        image: img.clone(),
    }));
    let export = pca_alignment_export(&checkpoint, &samples, config.train.augmentation)?;
    let csv = format!("# config_hash={}\n{}", config.hash(), export.to_csv());
    write_atomic(&paths.embeddings_csv(), csv.as_bytes())?;
    write_atomic(&paths.embeddings_svg(), export.to_svg()?.as_bytes())?;
    summary("embedding_rows", export.rows.len());
    summary("explained_ratio", export.pca.explained_ratio);
    summary("embeddings", paths.embeddings_csv().display());
    Ok(paths.embeddings_csv())
}
