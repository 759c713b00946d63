//! Image decoding and dataset loading.

use std::path::{Path, PathBuf};

use con2_core::dataprep::{make_synthetic_split, DatasetSplit};
use con2_core::image::Image;
use image::imageops::FilterType;
use image::DynamicImage;

use crate::config::{DatasetConfig, DatasetSource, RunConfig};
use crate::error::{CliError, CliResult};

const EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

/// A loaded split with a stable identifier for every test item.
pub struct LoadedSplit {
    pub split: DatasetSplit,
    pub test_ids: Vec<String>,
    pub train_ids: Vec<String>,
}

/// Resizes the shorter edge to `resize_shorter` (bilinear), then center
/// crops to `crop × crop`. Grayscale sources stay single-channel.
pub fn prepare_image(img: &DynamicImage, resize_shorter: usize, crop: usize) -> CliResult<Image> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(CliError::Config("image has zero size".into()));
    }
    let short = w.min(h);
    let nw = ((w * resize_shorter) as f64 / short as f64).round().max(1.0) as u32;
    let nh = ((h * resize_shorter) as f64 / short as f64).round().max(1.0) as u32;
    let resized = if (nw as usize, nh as usize) == (w, h) { img.clone() } else { img.resize_exact(nw, nh, FilterType::Triangle) };
    if (nw as usize) < crop || (nh as usize) < crop {
        return Err(CliError::Config(format!("image of {nw}x{nh} is smaller than the {crop}x{crop} crop")));
    }
    let left = (nw - crop as u32) / 2;
    let top = (nh - crop as u32) / 2;
    let cropped = resized.crop_imm(left, top, crop as u32, crop as u32);
    let gray = !cropped.color().has_color();
    let (channels, bytes) = if gray { (1, cropped.to_luma8().into_raw()) } else { (3, cropped.to_rgb8().into_raw()) };
    let pixels = bytes.into_iter().map(|b| b as f32 / 255.0).collect();
    Ok(Image::new(crop, crop, channels, pixels)?)
}

pub fn load_image(path: &Path, resize_shorter: usize, crop: usize) -> CliResult<Image> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => CliError::io(path, io),
        other => CliError::Config(format!("cannot decode {}: {other}", path.display())),
    })?;
    prepare_image(&img, resize_shorter, crop)
}

/// Every image file under `dir`, recursively, in sorted path order.
pub fn image_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(CliError::Config(format!("dataset folder {} does not exist", dir.display())));
    }
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| CliError::Config(format!("cannot read {}: {e}", dir.display())))?;
        let is_image = entry
            .path()
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if entry.file_type().is_file() && is_image {
            files.push(entry.into_path());
        }
    }
    Ok(files)
}

pub fn load_image_folder(dir: &Path, resize_shorter: usize, crop: usize) -> CliResult<Vec<(String, Image)>> {
    image_files(dir)?
        .into_iter()
        .map(|p| {
            let id = p.strip_prefix(dir).unwrap_or(&p).to_string_lossy().replace('\\', "/");
            Ok((id, load_image(&p, resize_shorter, crop)?))
        })
        .collect()
}

fn load_folder_split(config: &DatasetConfig, input_size: usize) -> CliResult<LoadedSplit> {
    let root = config.path.as_ref().ok_or_else(|| CliError::Config("dataset.path: required".into()))?;
    let resize = config.resize_shorter.unwrap_or(input_size);
    let train = load_image_folder(&root.join("train"), resize, input_size)?;
    if train.is_empty() {
        return Err(CliError::Config(format!("training folder {} holds no images", root.join("train").display())));
    }
    for (id, _) in &train {
        let lower = id.to_ascii_lowercase();
        if let Some(m) = config.anomaly_markers.iter().find(|m| lower.contains(&m.to_ascii_lowercase())) {
            return Err(CliError::Config(format!("training image train/{id} matches anomaly marker `{m}`")));
        }
    }
    let normal = load_image_folder(&root.join("test").join("normal"), resize, input_size)?;
    let anomalous = load_image_folder(&root.join("test").join("anomaly"), resize, input_size)?;
    let mut test_ids = Vec::new();
    let mut test = Vec::new();
    let mut test_labels = Vec::new();
    for (label, dir, items) in [(0u8, "normal", normal), (1, "anomaly", anomalous)] {
        for (id, img) in items {
            test_ids.push(format!("test/{dir}/{id}"));
            test.push(img);
            test_labels.push(label);
        }
    }
    let train_ids = train.iter().map(|(id, _)| format!("train/{id}")).collect();
    let split = DatasetSplit {
        train: train.into_iter().map(|(_, img)| img).collect(),
        test,
        test_labels,
        normalization: config.normalization,
    };
    split.validate()?;
    Ok(LoadedSplit { split, test_ids, train_ids })
}

pub fn load_split(config: &RunConfig) -> CliResult<LoadedSplit> {
    match config.dataset.source {
        DatasetSource::Synthetic => {
            let mut split = make_synthetic_split(&config.dataset.synthetic)?;
            split.normalization = config.dataset.normalization;
            let test_ids = (0..split.test.len()).map(|i| format!("test-{i:04}")).collect();
            let train_ids = (0..split.train.len()).map(|i| format!("train-{i:04}")).collect();
            Ok(LoadedSplit { split, test_ids, train_ids })
        }
        DatasetSource::Folder => load_folder_split(&config.dataset, config.model.input_size),
    }
}
