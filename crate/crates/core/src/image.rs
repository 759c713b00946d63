//! Float rasters and the three parameter-free context augmentations.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `height × width × channels` raster with values in `[0, 1]`, stored
/// row-major with interleaved channels.
///
/// Pixel values are kept on a 24-bit fixed-point grid (multiples of
/// `2^-24`). On that grid `1 - x` is exactly representable in `f32`, which
/// makes inversion an exact involution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub(crate) height: usize,
    pub(crate) width: usize,
    pub(crate) channels: usize,
    pub(crate) pixels: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage("image must have at least one row and column"));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage("image must have 1 or 3 channels"));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::InvalidImage("pixel buffer length does not match shape"));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidImage("pixel values must lie in [0, 1]"));
        }
        Ok(Self::from_raw(height, width, channels, pixels))
    }

    /// Builds an image by evaluating `f(row, col, channel)` for every pixel,
    /// clamping the result into `[0, 1]`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    pixels.push(clamp01(f(r, c, ch)));
                }
            }
        }
        Self::new(height, width, channels, pixels)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(height, width, channels, vec![clamp01(value); height * width * channels])
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.pixels[(row * self.width + col) * self.channels + channel]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Replicates a single-channel image into three identical channels.
    /// Three-channel images are returned unchanged.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let mut pixels = Vec::with_capacity(self.pixels.len() * 3);
        for &p in &self.pixels {
            pixels.extend_from_slice(&[p, p, p]);
        }
        Image { height: self.height, width: self.width, channels: 3, pixels }
    }

    /// Mean over all pixels and channels.
    pub fn mean(&self) -> f32 {
        let sum: f64 = self.pixels.iter().map(|&p| p as f64).sum();
        (sum / self.pixels.len() as f64) as f32
    }

    /// Internal constructor for transforms that already guarantee the invariants.
    pub(crate) fn from_raw(height: usize, width: usize, channels: usize, mut pixels: Vec<f32>) -> Image {
        debug_assert_eq!(pixels.len(), height * width * channels);
        pixels.iter_mut().for_each(|p| *p = snap(*p));
        Image { height, width, channels, pixels }
    }
}

const GRID: f32 = 16_777_216.0;

/// Rounds onto the `2^-24` grid. Scaling by a power of two is exact, so the
/// only rounding is the integer one.
#[inline]
pub(crate) fn snap(v: f32) -> f32 {
    libm::roundf(v * GRID) / GRID
}

#[inline]
pub(crate) fn clamp01(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// A context augmentation `t_C`: a deterministic, information-preserving
/// transform that moves normal samples into a second context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextAugmentation {
    Invert,
    Vflip,
    Equalize,
}

impl ContextAugmentation {
    pub const ALL: [ContextAugmentation; 3] =
        [ContextAugmentation::Invert, ContextAugmentation::Vflip, ContextAugmentation::Equalize];

    pub fn apply(self, img: &Image) -> Image {
        match self {
            ContextAugmentation::Invert => invert(img),
            ContextAugmentation::Vflip => vflip(img),
            ContextAugmentation::Equalize => equalize(img),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ContextAugmentation::Invert => "invert",
            ContextAugmentation::Vflip => "vflip",
            ContextAugmentation::Equalize => "equalize",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name().eq_ignore_ascii_case(name))
    }
}

/// Maps every pixel value `x` to `1 - x`.
pub fn invert(img: &Image) -> Image {
    let pixels = img.pixels.iter().map(|&p| 1.0 - p).collect();
    Image::from_raw(img.height, img.width, img.channels, pixels)
}

/// Mirrors the image vertically: row `r` becomes row `H - 1 - r`.
pub fn vflip(img: &Image) -> Image {
    let row_len = img.width * img.channels;
    let mut pixels = Vec::with_capacity(img.pixels.len());
    for row in img.pixels.chunks_exact(row_len).rev() {
        pixels.extend_from_slice(row);
    }
    Image::from_raw(img.height, img.width, img.channels, pixels)
}

pub const EQUALIZE_LEVELS: usize = 256;

#[inline]
pub(crate) fn quantize(p: f32) -> usize {
    let q = libm::roundf(clamp01(p) * 255.0);
    q as usize
}

/// Per-channel histogram equalization over 256 quantization levels.
///
/// Each channel is quantized to `round(255 x)` and remapped through its
/// cumulative histogram, `(cdf(q) - cdf_min) / (n - cdf_min)`, rounded back
/// onto the 256-level grid. A channel with a single occupied level is
/// returned unchanged.
pub fn equalize(img: &Image) -> Image {
    let n = img.height * img.width;
    let mut pixels = img.pixels.clone();
    for ch in 0..img.channels {
        let mut hist = [0usize; EQUALIZE_LEVELS];
        for i in 0..n {
            hist[quantize(img.pixels[i * img.channels + ch])] += 1;
        }
        let Some(lut) = equalization_lut(&hist, n) else {
            continue;
        };
        for i in 0..n {
            let idx = i * img.channels + ch;
            pixels[idx] = lut[quantize(img.pixels[idx])];
        }
    }
    Image::from_raw(img.height, img.width, img.channels, pixels)
}

/// Lookup table from quantized level to equalized intensity, or `None` when
/// the histogram is degenerate (one occupied level).
fn equalization_lut(hist: &[usize; EQUALIZE_LEVELS], total: usize) -> Option<[f32; EQUALIZE_LEVELS]> {
    let first = hist.iter().position(|&h| h > 0)?;
    let cdf_min = hist[first];
    if cdf_min == total {
        return None;
    }
    let denom = (total - cdf_min) as f64;
    let mut lut = [0.0f32; EQUALIZE_LEVELS];
    let mut cdf = 0usize;
    for (level, &h) in hist.iter().enumerate() {
        cdf += h;
        let v = if cdf <= cdf_min { 0.0 } else { (cdf - cdf_min) as f64 / denom };
        lut[level] = (libm::round(v * 255.0) / 255.0) as f32;
    }
    Some(lut)
}
