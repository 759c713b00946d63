//! Content augmentations: a SimCLR-style policy that samples fully
//! parameterized, replayable transform descriptors.
//!
//! Crop rectangles are expressed as fractions of the source height and width
//! so one descriptor can be replayed on any image size. Single-channel
//! images are replicated to RGB before any content transform is applied, so
//! every output has three channels.

use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{clamp01, Image};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContentPolicy {
    /// Range of the crop area as a fraction of the source area.
    pub crop_scale: (f32, f32),
    /// Range of the crop aspect ratio (width / height).
    pub crop_ratio: (f32, f32),
    pub hflip_prob: f32,
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub hue: f32,
    /// Probability that color jitter is applied at all.
    pub jitter_prob: f32,
    pub grayscale_prob: f32,
    /// Side length of the square output.
    pub output_size: usize,
    pub seed: u64,
}

impl Default for ContentPolicy {
    fn default() -> Self {
        Self {
            crop_scale: (0.08, 1.0),
            crop_ratio: (3.0 / 4.0, 4.0 / 3.0),
            hflip_prob: 0.5,
            brightness: 0.8,
            contrast: 0.8,
            saturation: 0.8,
            hue: 0.2,
            jitter_prob: 0.8,
            grayscale_prob: 0.2,
            output_size: 32,
            seed: 0,
        }
    }
}

impl ContentPolicy {
    /// A policy whose every sample is the identity up to resizing.
    pub fn identity(output_size: usize) -> Self {
        Self {
            crop_scale: (1.0, 1.0),
            crop_ratio: (1.0, 1.0),
            hflip_prob: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            hue: 0.0,
            jitter_prob: 0.0,
            grayscale_prob: 0.0,
            output_size,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |p: f32| (0.0..=1.0).contains(&p);
        let (s0, s1) = self.crop_scale;
        let (r0, r1) = self.crop_ratio;
        if !(s0 > 0.0 && s0 <= s1 && s1 <= 1.0) {
            return Err(Error::InvalidConfig("crop_scale must satisfy 0 < lo <= hi <= 1".into()));
        }
        if !(r0 > 0.0 && r0 <= r1) {
            return Err(Error::InvalidConfig("crop_ratio must satisfy 0 < lo <= hi".into()));
        }
        if !(prob(self.hflip_prob) && prob(self.jitter_prob) && prob(self.grayscale_prob)) {
            return Err(Error::InvalidConfig("probabilities must lie in [0, 1]".into()));
        }
        if self.brightness < 0.0 || self.contrast < 0.0 || self.saturation < 0.0 {
            return Err(Error::InvalidConfig("jitter strengths must be non-negative".into()));
        }
        if !(0.0..=0.5).contains(&self.hue) {
            return Err(Error::InvalidConfig("hue strength must lie in [0, 0.5]".into()));
        }
        if self.output_size == 0 {
            return Err(Error::InvalidConfig("output_size must be positive".into()));
        }
        Ok(())
    }
}

/// Crop rectangle in fractions of the source image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropBox {
    pub top: f32,
    pub left: f32,
    pub height: f32,
    pub width: f32,
}

impl CropBox {
    pub const FULL: CropBox = CropBox { top: 0.0, left: 0.0, height: 1.0, width: 1.0 };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JitterOp {
    Brightness,
    Contrast,
    Saturation,
    Hue,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorJitter {
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub hue: f32,
    pub order: [JitterOp; 4],
}

/// A fully sampled content transform. Applying it is deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContentTransform {
    pub crop: CropBox,
    pub hflip: bool,
    pub jitter: Option<ColorJitter>,
    pub grayscale: bool,
    pub output_size: usize,
}

impl ContentTransform {
    pub fn identity(output_size: usize) -> Self {
        Self { crop: CropBox::FULL, hflip: false, jitter: None, grayscale: false, output_size }
    }

    pub fn apply(&self, img: &Image) -> Image {
        let rgb = img.to_rgb();
        let mut out = resized_crop(&rgb, self.crop, self.output_size);
        if self.hflip {
            hflip_in_place(&mut out);
        }
        if let Some(jitter) = &self.jitter {
            for op in jitter.order {
                match op {
                    JitterOp::Brightness => adjust_brightness(&mut out, jitter.brightness),
                    JitterOp::Contrast => adjust_contrast(&mut out, jitter.contrast),
                    JitterOp::Saturation => adjust_saturation(&mut out, jitter.saturation),
                    JitterOp::Hue => adjust_hue(&mut out, jitter.hue),
                }
            }
        }
        if self.grayscale {
            to_grayscale_in_place(&mut out);
        }
        Image::from_raw(self.output_size, self.output_size, 3, out.pixels)
    }
}

/// Draws one content transform from `policy`.
pub fn sample_content_transform<R: Rng + ?Sized>(policy: &ContentPolicy, rng: &mut R) -> ContentTransform {
    let crop = sample_crop(policy, rng);
    let hflip = rng.random::<f32>() < policy.hflip_prob;
    let jitter = if rng.random::<f32>() < policy.jitter_prob {
        let factor = |rng: &mut R, s: f32| {
            if s == 0.0 {
                1.0
            } else {
                rng.random_range((1.0 - s).max(0.0)..=1.0 + s)
            }
        };
        let brightness = factor(rng, policy.brightness);
        let contrast = factor(rng, policy.contrast);
        let saturation = factor(rng, policy.saturation);
        let hue = if policy.hue == 0.0 { 0.0 } else { rng.random_range(-policy.hue..=policy.hue) };
        let mut order = [JitterOp::Brightness, JitterOp::Contrast, JitterOp::Saturation, JitterOp::Hue];
        order.shuffle(rng);
        Some(ColorJitter { brightness, contrast, saturation, hue, order })
    } else {
        None
    };
    let grayscale = rng.random::<f32>() < policy.grayscale_prob;
    ContentTransform { crop, hflip, jitter, grayscale, output_size: policy.output_size }
}

/// Random-resized-crop sampling in fractional coordinates: ten attempts at
/// an (area, log-aspect) draw that fits, then the full image.
fn sample_crop<R: Rng + ?Sized>(policy: &ContentPolicy, rng: &mut R) -> CropBox {
    let (s0, s1) = policy.crop_scale;
    let (r0, r1) = policy.crop_ratio;
    if s0 >= 1.0 && r0 == 1.0 && r1 == 1.0 {
        return CropBox::FULL;
    }
    let (lr0, lr1) = (libm::logf(r0), libm::logf(r1));
    for _ in 0..10 {
        let area = if s0 == s1 { s0 } else { rng.random_range(s0..=s1) };
        let ratio = libm::expf(if lr0 == lr1 { lr0 } else { rng.random_range(lr0..=lr1) });
        let width = libm::sqrtf(area * ratio);
        let height = libm::sqrtf(area / ratio);
        if width <= 1.0 && height <= 1.0 {
            let top = if height < 1.0 { rng.random_range(0.0..=1.0 - height) } else { 0.0 };
            let left = if width < 1.0 { rng.random_range(0.0..=1.0 - width) } else { 0.0 };
            return CropBox { top, left, height, width };
        }
    }
    CropBox::FULL
}

/// Bilinear resampling of `crop` (fractional) into a `size × size` output,
/// sampling at pixel centers. A full crop at the source size is exact.
fn resized_crop(img: &Image, crop: CropBox, size: usize) -> Image {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let src = img.pixels();
    let y_scale = crop.height * h as f32 / size as f32;
    let x_scale = crop.width * w as f32 / size as f32;
    let y_off = crop.top * h as f32;
    let x_off = crop.left * w as f32;
    let mut out = Vec::with_capacity(size * size * c);
    for i in 0..size {
        let y = (y_off + (i as f32 + 0.5) * y_scale - 0.5).clamp(0.0, (h - 1) as f32);
        let y0 = libm::floorf(y) as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = y - y0 as f32;
        for j in 0..size {
            let x = (x_off + (j as f32 + 0.5) * x_scale - 0.5).clamp(0.0, (w - 1) as f32);
            let x0 = libm::floorf(x) as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = x - x0 as f32;
            for ch in 0..c {
                let p = |r: usize, col: usize| src[(r * w + col) * c + ch];
                let v = if fy == 0.0 && fx == 0.0 {
                    p(y0, x0)
                } else {
                    let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                    let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                    top * (1.0 - fy) + bottom * fy
                };
                out.push(clamp01(v));
            }
        }
    }
    Image::from_raw(size, size, c, out)
}

fn hflip_in_place(img: &mut Image) {
    let (w, c) = (img.width(), img.channels());
    let mut pixels = core::mem::take(&mut img.pixels);
    for row in pixels.chunks_exact_mut(w * c) {
        for col in 0..w / 2 {
            for ch in 0..c {
                row.swap(col * c + ch, (w - 1 - col) * c + ch);
            }
        }
    }
    img.pixels = pixels;
}

#[inline]
fn luma(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

fn adjust_brightness(img: &mut Image, factor: f32) {
    if factor == 1.0 {
        return;
    }
    img.pixels.iter_mut().for_each(|p| *p = clamp01(*p * factor));
}

fn adjust_contrast(img: &mut Image, factor: f32) {
    if factor == 1.0 {
        return;
    }
    let n = img.pixels.len() / 3;
    let mean = img.pixels.chunks_exact(3).map(|px| luma(px[0], px[1], px[2])).sum::<f32>() / n as f32;
    img.pixels.iter_mut().for_each(|p| *p = clamp01(factor * *p + (1.0 - factor) * mean));
}

fn adjust_saturation(img: &mut Image, factor: f32) {
    if factor == 1.0 {
        return;
    }
    for px in img.pixels.chunks_exact_mut(3) {
        let gray = luma(px[0], px[1], px[2]);
        for p in px.iter_mut() {
            *p = clamp01(factor * *p + (1.0 - factor) * gray);
        }
    }
}

fn adjust_hue(img: &mut Image, shift: f32) {
    if shift == 0.0 {
        return;
    }
    for px in img.pixels.chunks_exact_mut(3) {
        let (h, s, v) = rgb_to_hsv(px[0], px[1], px[2]);
        let mut h = h + shift;
        h -= libm::floorf(h);
        let (r, g, b) = hsv_to_rgb(h, s, v);
        px[0] = clamp01(r);
        px[1] = clamp01(g);
        px[2] = clamp01(b);
    }
}

fn to_grayscale_in_place(img: &mut Image) {
    for px in img.pixels.chunks_exact_mut(3) {
        let gray = clamp01(luma(px[0], px[1], px[2]));
        px.fill(gray);
    }
}

/// Hue in `[0, 1)`.
fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta == 0.0 {
        return (0.0, s, max);
    }
    let h = if max == r {
        (g - b) / delta
    } else if max == g {
        2.0 + (b - r) / delta
    } else {
        4.0 + (r - g) / delta
    };
    let h = h / 6.0;
    (h - libm::floorf(h), s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = h * 6.0;
    let sector = libm::floorf(h6);
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match (sector as i32).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}
