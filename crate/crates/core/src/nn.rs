//! Minimal layer library with explicit backward passes.
//!
//! Layers cache what they need during [`Module::forward_train`] and consume
//! it in [`Module::backward`], which accumulates parameter gradients and
//! returns the gradient with respect to the layer input. [`Module::infer`]
//! is the evaluation path: no caching, batch-norm uses running statistics,
//! and every batch item is computed independently of the others.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    /// Running statistics: persisted, never optimized.
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
    pub kind: ParamKind,
}

impl Param {
    pub fn new(shape: &[usize], value: Vec<f32>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![0.0; value.len()];
        Self { shape: shape.to_vec(), value, grad, kind: ParamKind::Trainable }
    }

    pub fn buffer(shape: &[usize], value: Vec<f32>) -> Self {
        Self { kind: ParamKind::Buffer, grad: Vec::new(), ..Self::new(shape, value) }
    }

    fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f32, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
        Self::new(shape, (0..n).map(|_| dist.sample(rng)).collect())
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

pub trait Module: Send + Sync {
    fn forward_train(&mut self, x: &Tensor) -> Tensor;
    fn backward(&mut self, grad: &Tensor) -> Tensor;
    fn infer(&self, x: &Tensor) -> Tensor;
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        format!("{prefix}.{name}")
    }
}

/// `C = A·B + beta·C` for an `m × k` by `k × n` product, with arbitrary
/// element strides for `A` and `B` and a row-major `C`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!((m - 1) * rsa + (k - 1) * csa < a.len());
    assert!((k - 1) * rsb + (n - 1) * csb < b.len());
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

// ---------------------------------------------------------------- Conv2d

pub struct Conv2d {
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    weight: Param,
    bias: Option<Param>,
    cols: Vec<f32>,
    in_shape: [usize; 4],
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_ch * kernel * kernel) as f32;
        // He-uniform: variance 2 / fan_in for ReLU networks.
        let bound = libm::sqrtf(6.0 / fan_in);
        let weight = Param::uniform(&[out_ch, in_ch * kernel * kernel], bound, rng);
        let bias = bias.then(|| Param::new(&[out_ch], vec![0.0; out_ch]));
        Self { in_ch, out_ch, kernel, stride, pad, weight, bias, cols: Vec::new(), in_shape: [0; 4] }
    }

    fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        ((h + 2 * self.pad - self.kernel) / self.stride + 1, (w + 2 * self.pad - self.kernel) / self.stride + 1)
    }

    fn im2col(&self, x: &[f32], h: usize, w: usize, cols: &mut [f32]) {
        let (oh, ow) = self.out_dims(h, w);
        let p = oh * ow;
        let k = self.kernel;
        for c in 0..self.in_ch {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            dst[oy * ow + ox] = if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                x[(c * h + iy as usize) * w + ix as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f32], h: usize, w: usize, dx: &mut [f32]) {
        let (oh, ow) = self.out_dims(h, w);
        let p = oh * ow;
        let k = self.kernel;
        for c in 0..self.in_ch {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && (ix as usize) < w {
                                dx[(c * h + iy as usize) * w + ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    fn forward_item(&self, x: &[f32], h: usize, w: usize, cols: &mut [f32], out: &mut [f32]) {
        let (oh, ow) = self.out_dims(h, w);
        let p = oh * ow;
        let ckk = self.in_ch * self.kernel * self.kernel;
        self.im2col(x, h, w, cols);
        gemm(self.out_ch, ckk, p, &self.weight.value, (ckk, 1), cols, (p, 1), 0.0, out);
        if let Some(b) = &self.bias {
            for (o, row) in out.chunks_exact_mut(p).enumerate() {
                row.iter_mut().for_each(|v| *v += b.value[o]);
            }
        }
    }

    fn check_input(&self, x: &Tensor) -> (usize, usize, usize) {
        assert_eq!(x.shape.len(), 4, "conv input must be NCHW");
        assert_eq!(x.shape[1], self.in_ch, "conv input channels");
        (x.shape[0], x.shape[2], x.shape[3])
    }
}

impl Module for Conv2d {
    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let (n, h, w) = self.check_input(x);
        let (oh, ow) = self.out_dims(h, w);
        let (p, ckk) = (oh * ow, self.in_ch * self.kernel * self.kernel);
        let mut cols = vec![0.0; n * ckk * p];
        let mut out = Tensor::zeros(&[n, self.out_ch, oh, ow]);
        for b in 0..n {
            self.forward_item(
                x.item(b),
                h,
                w,
                &mut cols[b * ckk * p..(b + 1) * ckk * p],
                &mut out.data[b * self.out_ch * p..(b + 1) * self.out_ch * p],
            );
        }
        self.cols = cols;
        self.in_shape = [n, self.in_ch, h, w];
        out
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let [n, _, h, w] = self.in_shape;
        let (oh, ow) = self.out_dims(h, w);
        let (p, ckk) = (oh * ow, self.in_ch * self.kernel * self.kernel);
        let mut dx = Tensor::zeros(&self.in_shape);
        let mut dcols = vec![0.0; ckk * p];
        for b in 0..n {
            let dy = grad.item(b);
            let cols = &self.cols[b * ckk * p..(b + 1) * ckk * p];
            gemm(self.out_ch, p, ckk, dy, (p, 1), cols, (1, p), 1.0, &mut self.weight.grad);
            if let Some(bias) = &mut self.bias {
                for (o, row) in dy.chunks_exact(p).enumerate() {
                    bias.grad[o] += row.iter().sum::<f32>();
                }
            }
            gemm(ckk, self.out_ch, p, &self.weight.value, (1, ckk), dy, (p, 1), 0.0, &mut dcols);
            let item = self.in_ch * h * w;
            self.col2im(&dcols, h, w, &mut dx.data[b * item..(b + 1) * item]);
        }
        dx
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        let (n, h, w) = self.check_input(x);
        let (oh, ow) = self.out_dims(h, w);
        let (p, ckk) = (oh * ow, self.in_ch * self.kernel * self.kernel);
        let mut cols = vec![0.0; ckk * p];
        let mut out = Tensor::zeros(&[n, self.out_ch, oh, ow]);
        for b in 0..n {
            self.forward_item(x.item(b), h, w, &mut cols, &mut out.data[b * self.out_ch * p..(b + 1) * self.out_ch * p]);
        }
        out
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

// ---------------------------------------------------------- BatchNorm2d

pub struct BatchNorm2d {
    channels: usize,
    momentum: f32,
    eps: f32,
    gamma: Param,
    beta: Param,
    running_mean: Param,
    running_var: Param,
    xhat: Vec<f32>,
    inv_std: Vec<f32>,
    shape: [usize; 4],
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            momentum: 0.1,
            eps: 1e-5,
            gamma: Param::new(&[channels], vec![1.0; channels]),
            beta: Param::new(&[channels], vec![0.0; channels]),
            running_mean: Param::buffer(&[channels], vec![0.0; channels]),
            running_var: Param::buffer(&[channels], vec![1.0; channels]),
            xhat: Vec::new(),
            inv_std: Vec::new(),
            shape: [0; 4],
        }
    }
}

impl Module for BatchNorm2d {
    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let (n, c, hw) = (x.shape[0], x.shape[1], x.shape[2] * x.shape[3]);
        assert_eq!(c, self.channels);
        let count = (n * hw) as f64;
        let mut out = Tensor::zeros(&x.shape);
        self.xhat = vec![0.0; x.len()];
        self.inv_std = vec![0.0; c];
        for ch in 0..c {
            let plane = |b: usize| &x.data[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            let mean = (0..n).map(|b| plane(b).iter().map(|&v| v as f64).sum::<f64>()).sum::<f64>() / count;
            let var = (0..n)
                .map(|b| plane(b).iter().map(|&v| (v as f64 - mean) * (v as f64 - mean)).sum::<f64>())
                .sum::<f64>()
                / count;
            let inv_std = 1.0 / libm::sqrt(var + self.eps as f64);
            self.inv_std[ch] = inv_std as f32;
            for b in 0..n {
                let base = (b * c + ch) * hw;
                for i in 0..hw {
                    let xh = ((x.data[base + i] as f64 - mean) * inv_std) as f32;
                    self.xhat[base + i] = xh;
                    out.data[base + i] = self.gamma.value[ch] * xh + self.beta.value[ch];
                }
            }
            let unbiased = if count > 1.0 { var * count / (count - 1.0) } else { var };
            let m = self.momentum;
            self.running_mean.value[ch] = (1.0 - m) * self.running_mean.value[ch] + m * mean as f32;
            self.running_var.value[ch] = (1.0 - m) * self.running_var.value[ch] + m * unbiased as f32;
        }
        self.shape = [n, c, x.shape[2], x.shape[3]];
        out
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let [n, c, h, w] = self.shape;
        let hw = h * w;
        let count = (n * hw) as f32;
        let mut dx = Tensor::zeros(&self.shape);
        for ch in 0..c {
            let (mut sum_dy, mut sum_dy_xhat) = (0.0f32, 0.0f32);
            for b in 0..n {
                let base = (b * c + ch) * hw;
                for i in 0..hw {
                    sum_dy += grad.data[base + i];
                    sum_dy_xhat += grad.data[base + i] * self.xhat[base + i];
                }
            }
            self.gamma.grad[ch] += sum_dy_xhat;
            self.beta.grad[ch] += sum_dy;
            let scale = self.gamma.value[ch] * self.inv_std[ch] / count;
            for b in 0..n {
                let base = (b * c + ch) * hw;
                for i in 0..hw {
                    dx.data[base + i] =
                        scale * (count * grad.data[base + i] - sum_dy - self.xhat[base + i] * sum_dy_xhat);
                }
            }
        }
        dx
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        let (n, c, hw) = (x.shape[0], x.shape[1], x.shape[2] * x.shape[3]);
        let mut out = Tensor::zeros(&x.shape);
        for ch in 0..c {
            let inv_std = 1.0 / libm::sqrtf(self.running_var.value[ch] + self.eps);
            let scale = self.gamma.value[ch] * inv_std;
            let shift = self.beta.value[ch] - self.running_mean.value[ch] * scale;
            for b in 0..n {
                let base = (b * c + ch) * hw;
                for i in 0..hw {
                    out.data[base + i] = x.data[base + i] * scale + shift;
                }
            }
        }
        out
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
        f(&join(prefix, "running_mean"), &self.running_mean);
        f(&join(prefix, "running_var"), &self.running_var);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}

// ------------------------------------------------------------------ ReLU

#[derive(Default)]
pub struct Relu {
    mask: Vec<bool>,
}

impl Module for Relu {
    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        self.mask = x.data.iter().map(|&v| v > 0.0).collect();
        self.infer(x)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let data = grad.data.iter().zip(&self.mask).map(|(&g, &m)| if m { g } else { 0.0 }).collect();
        Tensor::from_vec(&grad.shape, data)
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        Tensor::from_vec(&x.shape, x.data.iter().map(|&v| v.max(0.0)).collect())
    }

    fn visit(&self, _: &str, _: &mut dyn FnMut(&str, &Param)) {}
    fn visit_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Param)) {}
}

// ------------------------------------------------------------- MaxPool2d

pub struct MaxPool2d {
    kernel: usize,
    stride: usize,
    pad: usize,
    argmax: Vec<usize>,
    in_shape: [usize; 4],
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        Self { kernel, stride, pad, argmax: Vec::new(), in_shape: [0; 4] }
    }

    fn pool(&self, x: &Tensor, mut record: Option<&mut Vec<usize>>) -> Tensor {
        let (n, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
        let oh = (h + 2 * self.pad - self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.pad - self.kernel) / self.stride + 1;
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        let mut o = 0;
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = base;
                    for ky in 0..self.kernel {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        for kx in 0..self.kernel {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix as usize >= w {
                                continue;
                            }
                            let idx = base + iy as usize * w + ix as usize;
                            if x.data[idx] > best {
                                best = x.data[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.data[o] = best;
                    if let Some(r) = record.as_deref_mut() {
                        r.push(best_idx);
                    }
                    o += 1;
                }
            }
        }
        out
    }
}

impl Module for MaxPool2d {
    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let mut argmax = Vec::new();
        let out = self.pool(x, Some(&mut argmax));
        self.argmax = argmax;
        self.in_shape = [x.shape[0], x.shape[1], x.shape[2], x.shape[3]];
        out
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let mut dx = Tensor::zeros(&self.in_shape);
        for (&idx, &g) in self.argmax.iter().zip(&grad.data) {
            dx.data[idx] += g;
        }
        dx
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        self.pool(x, None)
    }

    fn visit(&self, _: &str, _: &mut dyn FnMut(&str, &Param)) {}
    fn visit_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Param)) {}
}

// --------------------------------------------------------- GlobalAvgPool

/// `[N, C, H, W] -> [N, C]`.
#[derive(Default)]
pub struct GlobalAvgPool {
    in_shape: [usize; 4],
}

impl Module for GlobalAvgPool {
    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        self.in_shape = [x.shape[0], x.shape[1], x.shape[2], x.shape[3]];
        self.infer(x)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let [n, c, h, w] = self.in_shape;
        let hw = h * w;
        let mut dx = Tensor::zeros(&self.in_shape);
        for i in 0..n * c {
            let g = grad.data[i] / hw as f32;
            dx.data[i * hw..(i + 1) * hw].iter_mut().for_each(|v| *v = g);
        }
        dx
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        let (n, c, hw) = (x.shape[0], x.shape[1], x.shape[2] * x.shape[3]);
        let data = x.data.chunks_exact(hw).map(|p| p.iter().sum::<f32>() / hw as f32).collect();
        Tensor::from_vec(&[n, c], data)
    }

    fn visit(&self, _: &str, _: &mut dyn FnMut(&str, &Param)) {}
    fn visit_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Param)) {}
}

// ---------------------------------------------------------------- Linear

/// `[N, in] -> [N, out]`, `y = x Wᵀ + b`.
pub struct Linear {
    in_features: usize,
    out_features: usize,
    weight: Param,
    bias: Param,
    input: Tensor,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let bound = 1.0 / libm::sqrtf(in_features as f32);
        Self {
            in_features,
            out_features,
            weight: Param::uniform(&[out_features, in_features], bound, rng),
            bias: Param::uniform(&[out_features], bound, rng),
            input: Tensor::zeros(&[0, in_features]),
        }
    }
}

impl Module for Linear {
    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        self.input = x.clone();
        self.infer(x)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let n = self.input.batch();
        let (i, o) = (self.in_features, self.out_features);
        gemm(o, n, i, &grad.data, (1, o), &self.input.data, (i, 1), 1.0, &mut self.weight.grad);
        for row in grad.data.chunks_exact(o) {
            self.bias.grad.iter_mut().zip(row).for_each(|(b, g)| *b += g);
        }
        let mut dx = Tensor::zeros(&[n, i]);
        gemm(n, o, i, &grad.data, (o, 1), &self.weight.value, (i, 1), 0.0, &mut dx.data);
        dx
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.shape.len(), 2, "linear input must be [N, features]");
        assert_eq!(x.shape[1], self.in_features, "linear input width");
        let (n, i, o) = (x.shape[0], self.in_features, self.out_features);
        let mut out = Tensor::zeros(&[n, o]);
        // Row by row so a sample's output never depends on its batch.
        for (row, dst) in x.data.chunks_exact(i).zip(out.data.chunks_exact_mut(o)) {
            gemm(1, i, o, row, (i, 1), &self.weight.value, (1, i), 0.0, dst);
            dst.iter_mut().zip(&self.bias.value).for_each(|(v, b)| *v += b);
        }
        out
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

// ------------------------------------------------------------ Sequential

#[derive(Default)]
pub struct Sequential {
    layers: Vec<(String, Box<dyn Module>)>,
}

impl Sequential {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(mut self, name: &str, layer: impl Module + 'static) -> Self {
        self.layers.push((String::from(name), Box::new(layer)));
        self
    }
}

impl Module for Sequential {
    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        for (_, layer) in &mut self.layers {
            h = layer.forward_train(&h);
        }
        h
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let mut g = grad.clone();
        for (_, layer) in self.layers.iter_mut().rev() {
            g = layer.backward(&g);
        }
        g
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        for (_, layer) in &self.layers {
            h = layer.infer(&h);
        }
        h
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (name, layer) in &self.layers {
            layer.visit(&join(prefix, name), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (name, layer) in &mut self.layers {
            layer.visit_mut(&join(prefix, name), f);
        }
    }
}

// ------------------------------------------------------------ BasicBlock

/// Two 3×3 conv/batch-norm stages with an identity or 1×1 projection
/// shortcut, followed by ReLU.
pub struct BasicBlock {
    main: Sequential,
    shortcut: Option<Sequential>,
    out_relu: Relu,
}

impl BasicBlock {
    pub fn new<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, stride: usize, rng: &mut R) -> Self {
        let main = Sequential::new()
            .push("conv1", Conv2d::new(in_ch, out_ch, 3, stride, 1, false, rng))
            .push("bn1", BatchNorm2d::new(out_ch))
            .push("relu", Relu::default())
            .push("conv2", Conv2d::new(out_ch, out_ch, 3, 1, 1, false, rng))
            .push("bn2", BatchNorm2d::new(out_ch));
        let shortcut = (stride != 1 || in_ch != out_ch).then(|| {
            Sequential::new()
                .push("conv", Conv2d::new(in_ch, out_ch, 1, stride, 0, false, rng))
                .push("bn", BatchNorm2d::new(out_ch))
        });
        Self { main, shortcut, out_relu: Relu::default() }
    }
}

fn add(a: &Tensor, b: &Tensor) -> Tensor {
    Tensor::from_vec(&a.shape, a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect())
}

impl Module for BasicBlock {
    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let main = self.main.forward_train(x);
        let short = match &mut self.shortcut {
            Some(s) => s.forward_train(x),
            None => x.clone(),
        };
        self.out_relu.forward_train(&add(&main, &short))
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let g = self.out_relu.backward(grad);
        let dmain = self.main.backward(&g);
        let dshort = match &mut self.shortcut {
            Some(s) => s.backward(&g),
            None => g,
        };
        add(&dmain, &dshort)
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        let main = self.main.infer(x);
        let short = match &self.shortcut {
            Some(s) => s.infer(x),
            None => x.clone(),
        };
        self.out_relu.infer(&add(&main, &short))
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.main.visit(prefix, f);
        if let Some(s) = &self.shortcut {
            s.visit(&join(prefix, "shortcut"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.main.visit_mut(prefix, f);
        if let Some(s) = &mut self.shortcut {
            s.visit_mut(&join(prefix, "shortcut"), f);
        }
    }
}
