//! On-disk artifacts: checkpoints, score models, score and history CSVs.
//!
//! Every file is written through a temporary sibling and renamed into place,
//! and directory artifacts are assembled in a temporary directory first, so
//! readers never observe a partial artifact.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use con2_core::dataprep::Normalization;
use con2_core::model::{Con2Model, ModelConfig, NamedTensor};
use con2_core::optim::AdamW;
use con2_core::scoring::{
    GaussianComponent, GaussianScoreModel, NndScoreModel, Regularization, ScoreModel, ScoreVariant, TestTimePolicy,
};
use con2_core::trainer::{Checkpoint, RngState, StepRecord, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, RunConfig};
use crate::error::{CliError, CliResult};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
pub const SCORE_MODEL_FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = parent_dir(path);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let mut tmp = tempfile::Builder::new().prefix(".tmp-").tempfile_in(&dir).map_err(|e| CliError::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

/// Writes `files` into a fresh directory and swaps it in for `path`.
pub fn write_dir_atomic(path: &Path, files: &[(&str, Vec<u8>)]) -> CliResult<()> {
    let parent = parent_dir(path);
    std::fs::create_dir_all(&parent).map_err(|e| CliError::io(&parent, e))?;
    let staging = tempfile::Builder::new().prefix(".tmp-").tempdir_in(&parent).map_err(|e| CliError::io(&parent, e))?;
    for (name, bytes) in files {
        let p = staging.path().join(name);
        std::fs::write(&p, bytes).map_err(|e| CliError::io(&p, e))?;
    }
    if path.exists() {
        let old = tempfile::Builder::new().prefix(".old-").tempdir_in(&parent).map_err(|e| CliError::io(&parent, e))?;
        let graveyard = old.path().join("previous");
        std::fs::rename(path, &graveyard).map_err(|e| CliError::io(path, e))?;
        std::fs::rename(staging.keep(), path).map_err(|e| CliError::io(path, e))?;
        drop(old);
    } else {
        std::fs::rename(staging.keep(), path).map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn read(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

fn f32_bytes<'a>(values: impl IntoIterator<Item = &'a f32>) -> Vec<u8> {
    values.into_iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn f64_as_f32_bytes<'a>(values: impl IntoIterator<Item = &'a f64>) -> Vec<u8> {
    values.into_iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

fn f64_bytes<'a>(values: impl IntoIterator<Item = &'a f64>) -> Vec<u8> {
    values.into_iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn parse_f64(path: &Path, bytes: &[u8]) -> CliResult<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(CliError::corrupt(path, "length is not a multiple of 8"));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect())
}

fn parse_f32(path: &Path, bytes: &[u8]) -> CliResult<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return Err(CliError::corrupt(path, "length is not a multiple of 4"));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn check_version(path: &Path, format: &str, expected_format: &str, version: u32, expected: u32) -> CliResult<()> {
    if format != expected_format {
        return Err(CliError::corrupt(path, format!("format `{format}`, expected `{expected_format}`")));
    }
    if version != expected {
        return Err(CliError::corrupt(path, format!("format version {version}, this build reads version {expected}")));
    }
    Ok(())
}

// ------------------------------------------------------------ checkpoint

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into `params.bin`, in f32 elements.
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub format_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub params_sha256: String,
    pub config: RunConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub normalization: Normalization,
    pub step: usize,
    pub optimizer_step: u64,
    pub rng: RngState,
    pub tensors: Vec<TensorEntry>,
    pub history: Vec<StepRecord>,
}

/// Writes `dir/manifest.json` and `dir/params.bin` (little-endian f32).
pub fn save_checkpoint(dir: &Path, checkpoint: &Checkpoint, config: &RunConfig) -> CliResult<CheckpointManifest> {
    let mut params = Vec::new();
    let mut tensors = Vec::new();
    for t in checkpoint.model.named_tensors() {
        tensors.push(TensorEntry { name: t.name, shape: t.shape, offset: params.len() / 4, len: t.data.len() });
        params.extend(f32_bytes(&t.data));
    }
    let manifest = CheckpointManifest {
        format: "con2-checkpoint".into(),
        format_version: CHECKPOINT_FORMAT_VERSION,
        config_hash: config.hash(),
        seed: checkpoint.train_config.seed,
        params_sha256: sha256_hex(&params),
        config: config.clone(),
        model: checkpoint.model_config().clone(),
        train: checkpoint.train_config.clone(),
        normalization: checkpoint.normalization,
        step: checkpoint.step,
        optimizer_step: checkpoint.optimizer.step,
        rng: checkpoint.rng,
        tensors,
        history: checkpoint.history.clone(),
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write_dir_atomic(dir, &[(MANIFEST, json), ("params.bin", params)])?;
    Ok(manifest)
}

pub fn load_checkpoint(dir: &Path) -> CliResult<(Checkpoint, CheckpointManifest)> {
    if !dir.is_dir() {
        return Err(CliError::MissingArtifact(dir.to_path_buf()));
    }
    let manifest_path = dir.join(MANIFEST);
    let manifest: CheckpointManifest = {
        let bytes = read(&manifest_path)?;
        let probe: serde_json::Value =
            serde_json::from_slice(&bytes).map_err(|e| CliError::corrupt(&manifest_path, e))?;
        let format = probe.get("format").and_then(|v| v.as_str()).unwrap_or("");
        let version = probe.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        check_version(&manifest_path, format, "con2-checkpoint", version, CHECKPOINT_FORMAT_VERSION)?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::corrupt(&manifest_path, e))?
    };
    let params_path = dir.join("params.bin");
    let bytes = read(&params_path)?;
    if sha256_hex(&bytes) != manifest.params_sha256 {
        return Err(CliError::corrupt(&params_path, "checksum does not match the manifest"));
    }
    let values = parse_f32(&params_path, &bytes)?;
    let mut named = Vec::with_capacity(manifest.tensors.len());
    for t in &manifest.tensors {
        let data = values
            .get(t.offset..t.offset + t.len)
            .ok_or_else(|| CliError::corrupt(&params_path, format!("tensor {} out of bounds", t.name)))?;
        named.push(NamedTensor { name: t.name.clone(), shape: t.shape.clone(), data: data.to_vec() });
    }
    let mut model = Con2Model::new(manifest.model.clone())?;
    model.load_named_tensors(&named).map_err(|e| CliError::corrupt(&params_path, e))?;
    let train = &manifest.train;
    let mut optimizer = AdamW::new(train.beta1, train.beta2, train.adam_eps, train.weight_decay);
    optimizer.step = manifest.optimizer_step;
    let checkpoint = Checkpoint {
        model,
        train_config: manifest.train.clone(),
        normalization: manifest.normalization,
        step: manifest.step,
        rng: manifest.rng,
        optimizer,
        history: manifest.history.clone(),
    };
    Ok((checkpoint, manifest))
}

pub fn history_csv(history: &[StepRecord], config_hash: &str) -> String {
    let mut out = format!("# config_hash={config_hash}\nstep,alpha,learning_rate,total,context,content\n");
    for r in history {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.step, r.alpha, r.learning_rate, r.total, r.context, r.content);
    }
    out
}

// ----------------------------------------------------------- score model

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreModelManifest {
    pub format: String,
    pub format_version: u32,
    pub variant: ScoreVariant,
    pub config_hash: String,
    pub checkpoint_hash: String,
    pub dim: usize,
    /// Training rows per transform.
    pub rows: usize,
    pub transforms: usize,
    pub regularization: Option<Regularization>,
    pub epsilons: Vec<f64>,
    pub policy: TestTimePolicy,
}

/// NND: `keys.bin` holds `transforms × rows × dim` little-endian f32 values
/// (keys are encoder outputs, so f32 is lossless). LH: `means.bin` holds
/// `transforms × dim` and `covariances.bin` `transforms × dim × dim`
/// little-endian f64 values, since near-singular covariances do not survive
/// rounding. All row-major.
pub fn save_score_model(dir: &Path, model: &ScoreModel, config_hash: &str, checkpoint_hash: &str) -> CliResult<()> {
    let (manifest, files) = match model {
        ScoreModel::Nnd(m) => (
            ScoreModelManifest {
                format: "con2-score-model".into(),
                format_version: SCORE_MODEL_FORMAT_VERSION,
                variant: ScoreVariant::Nnd,
                config_hash: config_hash.into(),
                checkpoint_hash: checkpoint_hash.into(),
                dim: m.dim,
                rows: m.rows,
                transforms: m.keys.len(),
                regularization: None,
                epsilons: Vec::new(),
                policy: m.policy.clone(),
            },
            vec![("keys.bin", f64_as_f32_bytes(m.keys.iter().flatten()))],
        ),
        ScoreModel::Lh(m) => (
            ScoreModelManifest {
                format: "con2-score-model".into(),
                format_version: SCORE_MODEL_FORMAT_VERSION,
                variant: ScoreVariant::Lh,
                config_hash: config_hash.into(),
                checkpoint_hash: checkpoint_hash.into(),
                dim: m.dim(),
                rows: m.samples,
                transforms: m.components.len(),
                regularization: Some(m.regularization),
                epsilons: m.components.iter().map(|c| c.epsilon).collect(),
                policy: m.policy.clone(),
            },
            vec![
                ("means.bin", f64_bytes(m.components.iter().flat_map(|c| &c.mean))),
                ("covariances.bin", f64_bytes(m.components.iter().flat_map(|c| &c.covariance))),
            ],
        ),
    };
    let mut all = vec![(MANIFEST, serde_json::to_vec_pretty(&manifest).expect("manifest serializes"))];
    all.extend(files);
    write_dir_atomic(dir, &all)
}

pub fn load_score_model(dir: &Path) -> CliResult<(ScoreModel, ScoreModelManifest)> {
    if !dir.is_dir() {
        return Err(CliError::MissingArtifact(dir.to_path_buf()));
    }
    let manifest_path = dir.join(MANIFEST);
    let m: ScoreModelManifest =
        serde_json::from_slice(&read(&manifest_path)?).map_err(|e| CliError::corrupt(&manifest_path, e))?;
    check_version(&manifest_path, &m.format, "con2-score-model", m.format_version, SCORE_MODEL_FORMAT_VERSION)?;
    let load = |name: &str, expected: usize, wide: bool| -> CliResult<Vec<f64>> {
        let p = dir.join(name);
        let bytes = read(&p)?;
        let v = if wide { parse_f64(&p, &bytes)? } else { parse_f32(&p, &bytes)?.into_iter().map(f64::from).collect() };
        if v.len() != expected {
            return Err(CliError::corrupt(&p, format!("{} values, expected {expected}", v.len())));
        }
        Ok(v)
    };
    let (d, a) = (m.dim, m.transforms);
    let model = match m.variant {
        ScoreVariant::Nnd => {
            let keys = load("keys.bin", a * m.rows * d, false)?;
            let keys = keys.chunks(m.rows * d).map(<[f64]>::to_vec).collect();
            ScoreModel::Nnd(NndScoreModel::from_keys(m.policy.clone(), d, keys)?)
        }
        ScoreVariant::Lh => {
            let means = load("means.bin", a * d, true)?;
            let covs = load("covariances.bin", a * d * d, true)?;
            if m.epsilons.len() != a {
                return Err(CliError::corrupt(&manifest_path, "one epsilon per transform expected"));
            }
            let components = (0..a)
                .map(|t| {
                    GaussianComponent::from_moments(
                        means[t * d..(t + 1) * d].to_vec(),
                        covs[t * d * d..(t + 1) * d * d].to_vec(),
                        m.epsilons[t],
                        t,
                    )
                })
                .collect::<Result<Vec<_>, _>>()?;
            ScoreModel::Lh(GaussianScoreModel {
                policy: m.policy.clone(),
                regularization: m.regularization.unwrap_or_default(),
                samples: m.rows,
                components,
            })
        }
    };
    Ok((model, m))
}

// ------------------------------------------------------------ score file

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreFile {
    pub variant: ScoreVariant,
    pub config_hash: String,
    pub checkpoint_hash: String,
    pub seed: u64,
    pub test_time_augmentations: usize,
    pub ids: Vec<String>,
    pub scores: Vec<f64>,
    pub labels: Vec<Option<u8>>,
}

impl ScoreFile {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# config_hash={}", self.config_hash);
        let _ = writeln!(out, "# checkpoint_hash={}", self.checkpoint_hash);
        let _ = writeln!(out, "# variant={}", self.variant.name());
        let _ = writeln!(out, "# seed={}", self.seed);
        let _ = writeln!(out, "# test_time_augmentations={}", self.test_time_augmentations);
        out.push_str("id,score,label\n");
        for ((id, s), l) in self.ids.iter().zip(&self.scores).zip(&self.labels) {
            let label = l.map(|l| l.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{id},{s},{label}");
        }
        out
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let meta = |key: &str| -> CliResult<String> {
            text.lines()
                .filter_map(|l| l.strip_prefix("# "))
                .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .map(str::to_owned)
                .ok_or_else(|| CliError::corrupt(path, format!("missing `# {key}=` header")))
        };
        let number = |key: &str| -> CliResult<u64> {
            meta(key)?.parse().map_err(|_| CliError::corrupt(path, format!("`{key}` is not an integer")))
        };
        let variant = ScoreVariant::parse(&meta("variant")?).map_err(|e| CliError::corrupt(path, e))?;
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let (mut ids, mut scores, mut labels) = (Vec::new(), Vec::new(), Vec::new());
        for row in reader.records() {
            let row = row.map_err(|e| CliError::corrupt(path, e))?;
            let field = |i: usize| row.get(i).unwrap_or("");
            ids.push(field(0).to_owned());
            scores.push(field(1).parse::<f64>().map_err(|e| CliError::corrupt(path, e))?);
            labels.push(match field(2) {
                "" => None,
                "0" => Some(0),
                "1" => Some(1),
                other => return Err(CliError::corrupt(path, format!("label `{other}` is not 0 or 1"))),
            });
        }
        Ok(Self {
            variant,
            config_hash: meta("config_hash")?,
            checkpoint_hash: meta("checkpoint_hash")?,
            seed: number("seed")?,
            test_time_augmentations: number("test_time_augmentations")? as usize,
            ids,
            scores,
            labels,
        })
    }
}
