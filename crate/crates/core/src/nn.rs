//! Layers with explicit forward/backward passes.
//!
//! Each layer caches what its backward pass needs during a training-mode
//! forward. Parameter gradients accumulate into [`Param::grad`] until the
//! optimizer clears them.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, RngCore};

use crate::tensor::{
    col2im, gemm, global_avg_pool, global_avg_pool_backward, im2col, ConvGeometry, Tensor,
};
use crate::{Error, Result};

/// A learnable buffer and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
}

impl Param {
    pub fn new(value: Vec<f32>) -> Self {
        let grad = vec![0.0; value.len()];
        Self { value, grad }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Visitor over named parameters.
pub type ParamVisitor<'a> = dyn FnMut(&str, &mut Param) + 'a;
/// Visitor over named non-learnable state (batch-norm running statistics).
pub type BufferVisitor<'a> = dyn FnMut(&str, &mut Vec<f32>) + 'a;

/// Common traversal over learnable and persistent state.
pub trait Layer {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>);

    fn visit_buffers(&mut self, _prefix: &str, _f: &mut BufferVisitor<'_>) {}

    fn param_count(&mut self) -> usize {
        let mut total = 0;
        self.visit_params("", &mut |_, p| total += p.len());
        total
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        format!("{prefix}.{name}")
    }
}

fn missing_cache() -> Error {
    Error::InvalidValue("backward called without a training-mode forward")
}

pub fn relu_inplace(x: &mut Tensor) {
    for v in x.as_mut_slice() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes `dy` wherever the rectified output was not positive.
pub fn relu_backward_inplace(out: &Tensor, dy: &mut Tensor) {
    for (g, &o) in dy.as_mut_slice().iter_mut().zip(out.as_slice()) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

#[inline]
pub fn sigmoid_f32(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    pub weight: Param,
    pub bias: Option<Param>,
    input: Option<Tensor>,
    col: Vec<f32>,
}

impl Conv2d {
    /// He-uniform initialised convolution with `kernel / 2` zero padding.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
        rng: &mut dyn RngCore,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let bound = (6.0 / fan_in as f32).sqrt();
        let weight = (0..out_channels * fan_in)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            pad: kernel / 2,
            weight: Param::new(weight),
            bias: bias.then(|| Param::new(vec![0.0; out_channels])),
            input: None,
            col: Vec::new(),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    /// Rescales the initial weights, e.g. to start an output head near zero.
    pub fn scale_weights(&mut self, factor: f32) {
        for w in &mut self.weight.value {
            *w *= factor;
        }
    }

    fn geometry(&self, x: &Tensor) -> ConvGeometry {
        ConvGeometry {
            channels: self.in_channels,
            height: x.height(),
            width: x.width(),
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad,
        }
    }

    pub fn forward(&mut self, x: &Tensor, training: bool) -> Result<Tensor> {
        if x.channels() != self.in_channels {
            return Err(Error::ChannelMismatch {
                expected: self.in_channels,
                actual: x.channels(),
            });
        }
        let g = self.geometry(x);
        let (oh, ow) = (g.out_height(), g.out_width());
        let mut y = Tensor::zeros(x.batch(), self.out_channels, oh, ow);
        let k = g.col_rows();
        if !g.is_pointwise() {
            self.col.resize(k * oh * ow, 0.0);
        }
        for n in 0..x.batch() {
            let cols: &[f32] = if g.is_pointwise() {
                x.sample(n)
            } else {
                im2col(x.sample(n), &g, &mut self.col);
                &self.col
            };
            gemm(
                self.out_channels,
                k,
                oh * ow,
                &self.weight.value,
                false,
                cols,
                false,
                y.sample_mut(n),
                false,
            );
            if let Some(bias) = &self.bias {
                for (c, &b) in bias.value.iter().enumerate() {
                    for v in y.plane_mut(n, c) {
                        *v += b;
                    }
                }
            }
        }
        self.input = training.then(|| x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let x = self.input.take().ok_or_else(missing_cache)?;
        let g = self.geometry(&x);
        let (oh, ow) = (g.out_height(), g.out_width());
        let k = g.col_rows();
        let mut dx = Tensor::zeros(x.batch(), self.in_channels, x.height(), x.width());
        let mut dcol = if g.is_pointwise() {
            Vec::new()
        } else {
            self.col.resize(k * oh * ow, 0.0);
            vec![0.0; k * oh * ow]
        };
        for n in 0..x.batch() {
            let dy_s = dy.sample(n);
            if let Some(bias) = &mut self.bias {
                for (c, gb) in bias.grad.iter_mut().enumerate() {
                    *gb += dy.plane(n, c).iter().sum::<f32>();
                }
            }
            if g.is_pointwise() {
                gemm(
                    self.out_channels,
                    oh * ow,
                    k,
                    dy_s,
                    false,
                    x.sample(n),
                    true,
                    &mut self.weight.grad,
                    true,
                );
                gemm(
                    k,
                    self.out_channels,
                    oh * ow,
                    &self.weight.value,
                    true,
                    dy_s,
                    false,
                    dx.sample_mut(n),
                    false,
                );
            } else {
                im2col(x.sample(n), &g, &mut self.col);
                gemm(
                    self.out_channels,
                    oh * ow,
                    k,
                    dy_s,
                    false,
                    &self.col,
                    true,
                    &mut self.weight.grad,
                    true,
                );
                gemm(
                    k,
                    self.out_channels,
                    oh * ow,
                    &self.weight.value,
                    true,
                    dy_s,
                    false,
                    &mut dcol,
                    false,
                );
                col2im(&dcol, &g, dx.sample_mut(n));
            }
        }
        Ok(dx)
    }
}

impl Layer for Conv2d {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f32 = 0.1;

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    normalized: Option<Tensor>,
    inv_std: Vec<f32>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::new(vec![1.0; channels]),
            beta: Param::new(vec![0.0; channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            normalized: None,
            inv_std: vec![0.0; channels],
        }
    }

    pub fn forward(&mut self, x: &Tensor, training: bool) -> Result<Tensor> {
        if x.channels() != self.channels {
            return Err(Error::ChannelMismatch {
                expected: self.channels,
                actual: x.channels(),
            });
        }
        let (n, c, _, _) = x.shape();
        let mut y = x.clone();
        if !training {
            for ci in 0..c {
                let inv = (1.0 / (self.running_var[ci] as f64 + BN_EPS).sqrt()) as f32;
                let (m, g, b) = (self.running_mean[ci], self.gamma.value[ci], self.beta.value[ci]);
                for ni in 0..n {
                    for v in y.plane_mut(ni, ci) {
                        *v = (*v - m) * inv * g + b;
                    }
                }
            }
            self.normalized = None;
            return Ok(y);
        }
        let count = (n * x.plane_len()) as f64;
        let mut normalized = x.clone();
        for ci in 0..c {
            let mut sum = 0.0f64;
            for ni in 0..n {
                sum += x.plane(ni, ci).iter().map(|&v| v as f64).sum::<f64>();
            }
            let mean = sum / count;
            let mut sq = 0.0f64;
            for ni in 0..n {
                sq += x
                    .plane(ni, ci)
                    .iter()
                    .map(|&v| {
                        let d = v as f64 - mean;
                        d * d
                    })
                    .sum::<f64>();
            }
            let var = sq / count;
            let inv = 1.0 / (var + BN_EPS).sqrt();
            self.inv_std[ci] = inv as f32;
            let unbiased = if count > 1.0 { sq / (count - 1.0) } else { var };
            self.running_mean[ci] =
                (1.0 - BN_MOMENTUM) * self.running_mean[ci] + BN_MOMENTUM * mean as f32;
            self.running_var[ci] =
                (1.0 - BN_MOMENTUM) * self.running_var[ci] + BN_MOMENTUM * unbiased as f32;
            let (g, b) = (self.gamma.value[ci], self.beta.value[ci]);
            let (mean, inv) = (mean as f32, inv as f32);
            for ni in 0..n {
                let src = x.plane(ni, ci);
                let xh = normalized.plane_mut(ni, ci);
                for (h, &v) in xh.iter_mut().zip(src) {
                    *h = (v - mean) * inv;
                }
                for (o, &h) in y.plane_mut(ni, ci).iter_mut().zip(xh.iter()) {
                    *o = h * g + b;
                }
            }
        }
        self.normalized = Some(normalized);
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let xh = self.normalized.take().ok_or_else(missing_cache)?;
        let (n, c, _, _) = dy.shape();
        let count = (n * dy.plane_len()) as f32;
        let mut dx = Tensor::zeros(n, c, dy.height(), dy.width());
        for ci in 0..c {
            let mut sum_dy = 0.0f64;
            let mut sum_dy_xh = 0.0f64;
            for ni in 0..n {
                for (&g, &h) in dy.plane(ni, ci).iter().zip(xh.plane(ni, ci)) {
                    sum_dy += g as f64;
                    sum_dy_xh += (g * h) as f64;
                }
            }
            self.beta.grad[ci] += sum_dy as f32;
            self.gamma.grad[ci] += sum_dy_xh as f32;
            let gamma = self.gamma.value[ci];
            let scale = gamma * self.inv_std[ci] / count;
            let (s1, s2) = (sum_dy as f32, sum_dy_xh as f32);
            for ni in 0..n {
                let out = dx.plane_mut(ni, ci);
                for ((o, &g), &h) in out.iter_mut().zip(dy.plane(ni, ci)).zip(xh.plane(ni, ci)) {
                    *o = scale * (count * g - s1 - h * s2);
                }
            }
        }
        Ok(dx)
    }
}

impl Layer for BatchNorm2d {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut BufferVisitor<'_>) {
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}

/// Convolution → batch norm → optional ReLU.
#[derive(Debug, Clone)]
pub struct ConvBn {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
    relu: bool,
    output: Option<Tensor>,
}

impl ConvBn {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        relu: bool,
        rng: &mut dyn RngCore,
    ) -> Self {
        Self {
            conv: Conv2d::new(in_channels, out_channels, kernel, stride, false, rng),
            bn: BatchNorm2d::new(out_channels),
            relu,
            output: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, training: bool) -> Result<Tensor> {
        let y = self.conv.forward(x, training)?;
        let mut y = self.bn.forward(&y, training)?;
        if self.relu {
            relu_inplace(&mut y);
            self.output = training.then(|| y.clone());
        }
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let mut dy = dy.clone();
        if self.relu {
            let out = self.output.take().ok_or_else(missing_cache)?;
            relu_backward_inplace(&out, &mut dy);
        }
        let d = self.bn.backward(&dy)?;
        self.conv.backward(&d)
    }
}

impl Layer for ConvBn {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>) {
        self.conv.visit_params(&join(prefix, "conv"), f);
        self.bn.visit_params(&join(prefix, "bn"), f);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut BufferVisitor<'_>) {
        self.bn.visit_buffers(&join(prefix, "bn"), f);
    }
}

/// Residual bottleneck: 1×1 reduce, 3×3 (strided), 1×1 expand, plus an
/// identity or 1×1 projection shortcut, followed by ReLU.
#[derive(Debug, Clone)]
pub struct Bottleneck {
    reduce: ConvBn,
    spatial: ConvBn,
    expand: ConvBn,
    shortcut: Option<ConvBn>,
    output: Option<Tensor>,
}

impl Bottleneck {
    pub fn new(
        in_channels: usize,
        mid_channels: usize,
        out_channels: usize,
        stride: usize,
        rng: &mut dyn RngCore,
    ) -> Self {
        let shortcut = (in_channels != out_channels || stride != 1)
            .then(|| ConvBn::new(in_channels, out_channels, 1, stride, false, rng));
        Self {
            reduce: ConvBn::new(in_channels, mid_channels, 1, 1, true, rng),
            spatial: ConvBn::new(mid_channels, mid_channels, 3, stride, true, rng),
            expand: ConvBn::new(mid_channels, out_channels, 1, 1, false, rng),
            shortcut,
            output: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, training: bool) -> Result<Tensor> {
        let h = self.reduce.forward(x, training)?;
        let h = self.spatial.forward(&h, training)?;
        let mut y = self.expand.forward(&h, training)?;
        match &mut self.shortcut {
            Some(s) => y.add_assign(&s.forward(x, training)?),
            None => y.add_assign(x),
        }
        relu_inplace(&mut y);
        self.output = training.then(|| y.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let out = self.output.take().ok_or_else(missing_cache)?;
        let mut d = dy.clone();
        relu_backward_inplace(&out, &mut d);
        let dh = self.expand.backward(&d)?;
        let dh = self.spatial.backward(&dh)?;
        let mut dx = self.reduce.backward(&dh)?;
        match &mut self.shortcut {
            Some(s) => dx.add_assign(&s.backward(&d)?),
            None => dx.add_assign(&d),
        }
        Ok(dx)
    }
}

impl Layer for Bottleneck {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>) {
        self.reduce.visit_params(&join(prefix, "reduce"), f);
        self.spatial.visit_params(&join(prefix, "spatial"), f);
        self.expand.visit_params(&join(prefix, "expand"), f);
        if let Some(s) = &mut self.shortcut {
            s.visit_params(&join(prefix, "shortcut"), f);
        }
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut BufferVisitor<'_>) {
        self.reduce.visit_buffers(&join(prefix, "reduce"), f);
        self.spatial.visit_buffers(&join(prefix, "spatial"), f);
        self.expand.visit_buffers(&join(prefix, "expand"), f);
        if let Some(s) = &mut self.shortcut {
            s.visit_buffers(&join(prefix, "shortcut"), f);
        }
    }
}

/// Feature fusion: 3×3 conv-bn-relu over the concatenated input, then a
/// globally pooled, sigmoid-gated channel weight `w` applied as `f·w + f`.
#[derive(Debug, Clone)]
pub struct FeatureFusion {
    conv: ConvBn,
    squeeze: Conv2d,
    excite: Conv2d,
    features: Option<Tensor>,
    hidden: Option<Tensor>,
    weights: Option<Tensor>,
}

impl FeatureFusion {
    pub fn new(in_channels: usize, out_channels: usize, rng: &mut dyn RngCore) -> Self {
        Self {
            conv: ConvBn::new(in_channels, out_channels, 3, 1, true, rng),
            squeeze: Conv2d::new(out_channels, out_channels, 1, 1, true, rng),
            excite: Conv2d::new(out_channels, out_channels, 1, 1, true, rng),
            features: None,
            hidden: None,
            weights: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.excite.out_channels()
    }

    /// Channel weights of the last forward pass, `N×C×1×1`.
    pub fn last_weights(&self) -> Option<&Tensor> {
        self.weights.as_ref()
    }

    pub fn forward(&mut self, x: &Tensor, training: bool) -> Result<Tensor> {
        let f = self.conv.forward(x, training)?;
        let pooled = global_avg_pool(&f);
        let mut hidden = self.squeeze.forward(&pooled, training)?;
        relu_inplace(&mut hidden);
        let weights = self.excite.forward(&hidden, training)?.map(sigmoid_f32);
        let (n, c, _, _) = f.shape();
        let mut y = f.clone();
        for ni in 0..n {
            for ci in 0..c {
                let scale = 1.0 + weights.as_slice()[ni * c + ci];
                for v in y.plane_mut(ni, ci) {
                    *v *= scale;
                }
            }
        }
        if training {
            self.features = Some(f);
            self.hidden = Some(hidden);
        }
        self.weights = Some(weights);
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let f = self.features.take().ok_or_else(missing_cache)?;
        let hidden = self.hidden.take().ok_or_else(missing_cache)?;
        let weights = self.weights.clone().ok_or_else(missing_cache)?;
        let (n, c, h, w) = f.shape();
        let mut df = Tensor::zeros(n, c, h, w);
        let mut dpre = Tensor::zeros(n, c, 1, 1);
        for ni in 0..n {
            for ci in 0..c {
                let wv = weights.as_slice()[ni * c + ci];
                let g = dy.plane(ni, ci);
                let dot: f32 = g.iter().zip(f.plane(ni, ci)).map(|(a, b)| a * b).sum();
                dpre.as_mut_slice()[ni * c + ci] = dot * wv * (1.0 - wv);
                for (o, &gv) in df.plane_mut(ni, ci).iter_mut().zip(g) {
                    *o = gv * (1.0 + wv);
                }
            }
        }
        let mut dhidden = self.excite.backward(&dpre)?;
        relu_backward_inplace(&hidden, &mut dhidden);
        let dpooled = self.squeeze.backward(&dhidden)?;
        df.add_assign(&global_avg_pool_backward(&dpooled, h, w));
        self.conv.backward(&df)
    }
}

impl Layer for FeatureFusion {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>) {
        self.conv.visit_params(&join(prefix, "conv"), f);
        self.squeeze.visit_params(&join(prefix, "squeeze"), f);
        self.excite.visit_params(&join(prefix, "excite"), f);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut BufferVisitor<'_>) {
        self.conv.visit_buffers(&join(prefix, "conv"), f);
    }
}
