//! The two-branch boundary-aware network.
//!
//! ```text
//! image ─► semantic branch (stride 4) ─┬─► 1×1 ─► upsample ─► σ(·/T) ─► attention
//!   │                                  │                                │
//!   └───────────── concat ◄────────────┼────────────────────────────────┘
//!                    │                 │
//!             mining branch      upsample ×4
//!                    └──── concat ─────┘
//!                            │
//!                    feature fusion ─► 1×1 ─► σ ─► confidence
//! ```
//!
//! The semantic branch is an FCN-4s style encoder/decoder of residual
//! bottlenecks: features at strides 32, 16, 8 and 4 are merged top-down by
//! bilinear upsampling and element-wise addition.

use alloc::vec::Vec;

use rand::RngCore;

use crate::nn::{
    join, sigmoid_f32, Bottleneck, BufferVisitor, Conv2d, ConvBn, FeatureFusion, Layer,
    ParamVisitor,
};
use crate::raster::{Grid, Image, MaskMap, MaskRole};
use crate::tensor::{
    concat_channels, split_channels, upsample_bilinear, upsample_bilinear_backward, Tensor,
};
use crate::{Error, Result};

/// Input sides must be multiples of this (five 2× downsamplings).
pub const INPUT_MULTIPLE: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Channel cap across the semantic branch.
    pub max_channels: usize,
    /// Output channels of the stride-2 stem convolution.
    pub stem_channels: usize,
    /// Output channels of the stride 4, 8, 16, 32 stages.
    pub stage_channels: [usize; 4],
    pub bottlenecks_per_stage: [usize; 4],
    /// Bottleneck inner width is `out / bottleneck_reduction`.
    pub bottleneck_reduction: usize,
    pub mining_channels: usize,
    /// Number of 3×3 conv-bn-relu layers in the mining branch.
    pub mining_layers: usize,
    pub fusion_channels: usize,
    /// When false the attention head is dropped and the mining branch sees
    /// only the RGB image.
    pub attention: bool,
    /// Temperature of the attention sigmoid.
    pub attention_temperature: f64,
}

impl ModelConfig {
    /// The 64-channel variant.
    pub fn banet64() -> Self {
        Self {
            max_channels: 64,
            stem_channels: 16,
            stage_channels: [16, 32, 64, 64],
            bottlenecks_per_stage: [2, 2, 2, 2],
            bottleneck_reduction: 1,
            mining_channels: 16,
            mining_layers: 2,
            fusion_channels: 32,
            attention: true,
            attention_temperature: 4.0,
        }
    }

    /// The 512-channel variant: every semantic width scaled by 8.
    pub fn banet512() -> Self {
        Self {
            max_channels: 512,
            stem_channels: 64,
            stage_channels: [128, 256, 512, 512],
            bottleneck_reduction: 2,
            fusion_channels: 64,
            ..Self::banet64()
        }
    }

    /// Width of the decoder features (and of the semantic branch output).
    pub fn decoder_channels(&self) -> usize {
        self.stage_channels
            .iter()
            .copied()
            .max()
            .unwrap_or(1)
            .min(self.max_channels)
    }

    /// Channels fed to the mining branch.
    pub fn mining_input_channels(&self) -> usize {
        if self.attention {
            4
        } else {
            3
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.max_channels,
            self.stem_channels,
            self.mining_channels,
            self.mining_layers,
            self.fusion_channels,
            self.bottleneck_reduction,
        ];
        if counts.iter().chain(&self.stage_channels).chain(&self.bottlenecks_per_stage).any(|&c| c == 0) {
            return Err(Error::InvalidValue("model channel and block counts must be >= 1"));
        }
        if self.stem_channels > self.max_channels
            || self.stage_channels.iter().any(|&c| c > self.max_channels)
        {
            return Err(Error::InvalidValue("a semantic stage exceeds max_channels"));
        }
        if !(self.attention_temperature > 0.0) {
            return Err(Error::InvalidValue("attention temperature must be positive"));
        }
        Ok(())
    }
}

/// Raw network outputs for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    /// Pre-sigmoid confidence, `N×1×H×W`.
    pub seg_logits: Tensor,
    /// Pre-temperature attention logits, `N×1×H×W`.
    pub attention_logits: Option<Tensor>,
    /// `σ(attention_logits / T)`.
    pub attention: Option<Tensor>,
}

impl ModelOutput {
    pub fn confidence(&self) -> Tensor {
        self.seg_logits.map(sigmoid_f32)
    }
}

/// Single-image result with maps at input resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub confidence: MaskMap,
    pub attention: Option<MaskMap>,
    pub attention_logits: Option<Grid>,
}

#[derive(Debug, Clone)]
struct Cache {
    input_dims: (usize, usize),
    level_dims: [(usize, usize); 4],
    attention: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct Banet {
    config: ModelConfig,
    stem: ConvBn,
    stages: Vec<Vec<Bottleneck>>,
    laterals: Vec<ConvBn>,
    decoder: Vec<Bottleneck>,
    attention_proj: Option<Conv2d>,
    mining: Vec<ConvBn>,
    fusion: FeatureFusion,
    head: Conv2d,
    cache: Option<Cache>,
}


impl Banet {
    pub fn new(config: ModelConfig, rng: &mut dyn RngCore) -> Result<Self> {
        config.validate()?;
        let dec = config.decoder_channels();
        let mid = |c: usize| (c / config.bottleneck_reduction).max(1);
        let stem = ConvBn::new(3, config.stem_channels, 3, 2, true, rng);
        let mut stages = Vec::new();
        let mut in_c = config.stem_channels;
        for (&out_c, &blocks) in config.stage_channels.iter().zip(&config.bottlenecks_per_stage) {
            let mut stage = Vec::new();
            for b in 0..blocks {
                let stride = if b == 0 { 2 } else { 1 };
                stage.push(Bottleneck::new(in_c, mid(out_c), out_c, stride, rng));
                in_c = out_c;
            }
            stages.push(stage);
        }
        let laterals = config
            .stage_channels
            .iter()
            .map(|&c| ConvBn::new(c, dec, 1, 1, false, rng))
            .collect();
        let decoder = (0..3).map(|_| Bottleneck::new(dec, mid(dec), dec, 1, rng)).collect();
        let attention_proj = config.attention.then(|| {
            let mut proj = Conv2d::new(dec, 1, 1, 1, true, rng);
            proj.scale_weights(0.1);
            proj
        });
        let mut mining = Vec::new();
        let mut mc = config.mining_input_channels();
        for _ in 0..config.mining_layers {
            mining.push(ConvBn::new(mc, config.mining_channels, 3, 1, true, rng));
            mc = config.mining_channels;
        }
        let fusion = FeatureFusion::new(dec + config.mining_channels, config.fusion_channels, rng);
        let mut head = Conv2d::new(config.fusion_channels, 1, 1, 1, true, rng);
        head.scale_weights(0.1);
        Ok(Self {
            config,
            stem,
            stages,
            laterals,
            decoder,
            attention_proj,
            mining,
            fusion,
            head,
            cache: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Learnable scalar count.
    pub fn count_parameters(&mut self) -> usize {
        self.param_count()
    }

    /// Stride-4 semantic features.
    pub fn semantic_branch(&mut self, x: &Tensor, training: bool) -> Result<Tensor> {
        let (h, w) = (x.height(), x.width());
        if h % INPUT_MULTIPLE != 0 || w % INPUT_MULTIPLE != 0 {
            return Err(Error::Indivisible {
                height: h,
                width: w,
                multiple: INPUT_MULTIPLE,
            });
        }
        let mut s = self.stem.forward(x, training)?;
        let mut feats = Vec::with_capacity(4);
        for stage in &mut self.stages {
            for block in stage.iter_mut() {
                s = block.forward(&s, training)?;
            }
            feats.push(s.clone());
        }
        let mut d = self.laterals[3].forward(&feats[3], training)?;
        for level in (0..3).rev() {
            let f = &feats[level];
            let mut up = upsample_bilinear(&d, f.height(), f.width());
            up.add_assign(&self.laterals[level].forward(f, training)?);
            d = self.decoder[2 - level].forward(&up, training)?;
        }
        if let Some(cache) = &mut self.cache {
            for (slot, f) in cache.level_dims.iter_mut().zip(&feats) {
                *slot = (f.height(), f.width());
            }
        }
        Ok(d)
    }

    fn semantic_backward(&mut self, d_out: &Tensor, level_dims: &[(usize, usize); 4]) -> Result<()> {
        let mut d_feats: Vec<Option<Tensor>> = (0..4).map(|_| None).collect();
        let mut dd = d_out.clone();
        for level in 0..3 {
            let d_sum = self.decoder[2 - level].backward(&dd)?;
            d_feats[level] = Some(self.laterals[level].backward(&d_sum)?);
            let (h, w) = level_dims[level + 1];
            dd = upsample_bilinear_backward(&d_sum, h, w);
        }
        let mut ds = self.laterals[3].backward(&dd)?;
        for i in (0..4).rev() {
            for block in self.stages[i].iter_mut().rev() {
                ds = block.backward(&ds)?;
            }
            if i > 0 {
                if let Some(d) = &d_feats[i - 1] {
                    ds.add_assign(d);
                }
            }
        }
        self.stem.backward(&ds)?;
        Ok(())
    }

    /// Batched forward pass over an `N×3×H×W` tensor.
    pub fn forward(&mut self, x: &Tensor, training: bool) -> Result<ModelOutput> {
        if x.channels() != 3 {
            return Err(Error::ChannelMismatch {
                expected: 3,
                actual: x.channels(),
            });
        }
        let (h, w) = (x.height(), x.width());
        self.cache = training.then(|| Cache {
            input_dims: (h, w),
            level_dims: [(0, 0); 4],
            attention: None,
        });
        let semantic = self.semantic_branch(x, training)?;

        let temperature = self.config.attention_temperature as f32;
        let (attention_logits, attention) = match &mut self.attention_proj {
            Some(proj) => {
                let q = proj.forward(&semantic, training)?;
                let logits = upsample_bilinear(&q, h, w);
                let att = logits.map(|v| sigmoid_f32(v / temperature));
                (Some(logits), Some(att))
            }
            None => (None, None),
        };

        let mut low = match &attention {
            Some(att) => concat_channels(x, att)?,
            None => x.clone(),
        };
        for layer in &mut self.mining {
            low = layer.forward(&low, training)?;
        }
        let high = upsample_bilinear(&semantic, h, w);
        let fused = self.fusion.forward(&concat_channels(&high, &low)?, training)?;
        let seg_logits = self.head.forward(&fused, training)?;

        if let Some(cache) = &mut self.cache {
            cache.attention = attention.clone();
        }
        Ok(ModelOutput {
            seg_logits,
            attention_logits,
            attention,
        })
    }

    /// Back-propagates logit gradients from the last training-mode forward,
    /// accumulating into every parameter's gradient.
    pub fn backward(&mut self, d_seg_logits: &Tensor, d_attention_logits: Option<&Tensor>) -> Result<()> {
        let cache = self
            .cache
            .take()
            .ok_or(Error::InvalidValue("backward called without a training-mode forward"))?;
        let (h, w) = cache.input_dims;
        let (qh, qw) = cache.level_dims[0];
        let d_fused = self.head.backward(d_seg_logits)?;
        let d_cat = self.fusion.backward(&d_fused)?;
        let (d_high, d_low) = split_channels(&d_cat, self.config.decoder_channels());
        let mut d_sem = upsample_bilinear_backward(&d_high, qh, qw);

        let mut d_mining = d_low;
        for layer in self.mining.iter_mut().rev() {
            d_mining = layer.backward(&d_mining)?;
        }
        if let (Some(proj), Some(att)) = (&mut self.attention_proj, &cache.attention) {
            let (_, d_att) = split_channels(&d_mining, 3);
            let inv_t = 1.0 / self.config.attention_temperature as f32;
            let mut d_logits = d_att.zip_map(att, |g, a| g * a * (1.0 - a) * inv_t);
            if let Some(extra) = d_attention_logits {
                d_logits.add_assign(extra);
            }
            let d_q = upsample_bilinear_backward(&d_logits, qh, qw);
            d_sem.add_assign(&proj.backward(&d_q)?);
        }
        debug_assert_eq!((d_seg_logits.height(), d_seg_logits.width()), (h, w));
        self.semantic_backward(&d_sem, &cache.level_dims)
    }

    /// Clears every accumulated parameter gradient.
    pub fn zero_grad(&mut self) {
        self.visit_params("", &mut |_, p| p.zero_grad());
    }

    /// Eval-mode inference on one image whose sides are multiples of 32.
    pub fn predict(&mut self, image: &Image) -> Result<ForwardOutput> {
        let x = image_tensor(&[image])?;
        let out = self.forward(&x, false)?;
        let confidence = MaskMap::new(out.confidence().plane_grid(0, 0), MaskRole::Confidence)?;
        let attention = match &out.attention {
            Some(a) => Some(MaskMap::new(a.plane_grid(0, 0), MaskRole::Attention)?),
            None => None,
        };
        Ok(ForwardOutput {
            confidence,
            attention,
            attention_logits: out.attention_logits.map(|t| t.plane_grid(0, 0)),
        })
    }

    /// Last fusion channel weights, `N×C×1×1`.
    pub fn fusion_weights(&self) -> Option<&Tensor> {
        self.fusion.last_weights()
    }
}

impl Layer for Banet {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>) {
        self.stem.visit_params(&join(prefix, "semantic.stem"), f);
        for (i, stage) in self.stages.iter_mut().enumerate() {
            for (j, block) in stage.iter_mut().enumerate() {
                block.visit_params(&join(prefix, &alloc::format!("semantic.stage{i}.{j}")), f);
            }
        }
        for (i, l) in self.laterals.iter_mut().enumerate() {
            l.visit_params(&join(prefix, &alloc::format!("semantic.lateral{i}")), f);
        }
        for (i, d) in self.decoder.iter_mut().enumerate() {
            d.visit_params(&join(prefix, &alloc::format!("semantic.decoder{i}")), f);
        }
        if let Some(p) = &mut self.attention_proj {
            p.visit_params(&join(prefix, "attention"), f);
        }
        for (i, m) in self.mining.iter_mut().enumerate() {
            m.visit_params(&join(prefix, &alloc::format!("mining.{i}")), f);
        }
        self.fusion.visit_params(&join(prefix, "fusion"), f);
        self.head.visit_params(&join(prefix, "head"), f);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut BufferVisitor<'_>) {
        self.stem.visit_buffers(&join(prefix, "semantic.stem"), f);
        for (i, stage) in self.stages.iter_mut().enumerate() {
            for (j, block) in stage.iter_mut().enumerate() {
                block.visit_buffers(&join(prefix, &alloc::format!("semantic.stage{i}.{j}")), f);
            }
        }
        for (i, l) in self.laterals.iter_mut().enumerate() {
            l.visit_buffers(&join(prefix, &alloc::format!("semantic.lateral{i}")), f);
        }
        for (i, d) in self.decoder.iter_mut().enumerate() {
            d.visit_buffers(&join(prefix, &alloc::format!("semantic.decoder{i}")), f);
        }
        for (i, m) in self.mining.iter_mut().enumerate() {
            m.visit_buffers(&join(prefix, &alloc::format!("mining.{i}")), f);
        }
        self.fusion.visit_buffers(&join(prefix, "fusion"), f);
    }
}

/// Stacks images into an `N×3×H×W` tensor.
pub fn image_tensor(images: &[&Image]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or(Error::InvalidValue("cannot stack zero images"))?;
    let (h, w) = first.dims();
    let mut t = Tensor::zeros(images.len(), 3, h, w);
    for (n, img) in images.iter().enumerate() {
        if img.dims() != (h, w) {
            return Err(Error::ShapeMismatch {
                expected: (h, w),
                actual: img.dims(),
            });
        }
        let src = img.as_slice();
        for c in 0..3 {
            for (i, v) in t.plane_mut(n, c).iter_mut().enumerate() {
                *v = src[i * 3 + c] as f32;
            }
        }
    }
    Ok(t)
}

/// Parameter storage in megabytes at 4 bytes per scalar.
pub fn param_megabytes(count: usize) -> f64 {
    4.0 * count as f64 / (1u64 << 20) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tests::random;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> ModelConfig {
        ModelConfig {
            max_channels: 8,
            stem_channels: 4,
            stage_channels: [4, 8, 8, 8],
            bottlenecks_per_stage: [1, 1, 1, 1],
            bottleneck_reduction: 2,
            mining_channels: 4,
            mining_layers: 1,
            fusion_channels: 4,
            attention: true,
            attention_temperature: 4.0,
        }
    }

    fn unit_input(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> Tensor {
        random(rng, n, 3, h, w).map(|v| 0.5 + 0.5 * v)
    }

    #[test]
    fn output_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut model = Banet::new(tiny(), &mut rng).unwrap();
        for (h, w) in [(64, 64), (32, 96)] {
            let x = unit_input(&mut rng, 2, h, w);
            let out = model.forward(&x, false).unwrap();
            assert_eq!(out.seg_logits.shape(), (2, 1, h, w));
            assert_eq!(out.attention.as_ref().unwrap().shape(), (2, 1, h, w));
            let sem = model.semantic_branch(&x, false).unwrap();
            assert_eq!(sem.shape(), (2, 8, h / 4, w / 4));
        }
        let err = model.forward(&Tensor::zeros(1, 3, 48, 64), false).unwrap_err();
        assert!(matches!(err, Error::Indivisible { .. }));
    }

    #[test]
    fn channel_cap_is_respected() {
        let cfg = ModelConfig::banet64();
        assert!(cfg.stage_channels.iter().all(|&c| c <= 64));
        assert_eq!(cfg.decoder_channels(), 64);
        let mut bad = cfg.clone();
        bad.stage_channels[3] = 128;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_attention_projection_gives_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut model = Banet::new(tiny(), &mut rng).unwrap();
        model.visit_params("", &mut |name, p| {
            if name.starts_with("attention") {
                p.value.fill(0.0);
            }
        });
        let out = model.forward(&unit_input(&mut rng, 1, 32, 32), false).unwrap();
        assert!(out.attention.unwrap().as_slice().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn ablated_model_has_three_channel_mining_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut cfg = tiny();
        cfg.attention = false;
        let mut model = Banet::new(cfg, &mut rng).unwrap();
        assert_eq!(model.mining[0].conv.in_channels(), 3);
        let out = model.forward(&unit_input(&mut rng, 1, 32, 32), false).unwrap();
        assert!(out.attention.is_none());
        let mut full = Banet::new(tiny(), &mut rng).unwrap();
        assert_eq!(full.mining[0].conv.in_channels(), 4);
        assert!(full.count_parameters() > model.count_parameters());
    }

    #[test]
    fn batch_order_is_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut model = Banet::new(tiny(), &mut rng).unwrap();
        let x = unit_input(&mut rng, 3, 32, 32);
        let out = model.forward(&x, false).unwrap();
        let perm = [2, 0, 1];
        let permuted = model.forward(&x.select(&perm), false).unwrap();
        assert_eq!(permuted.seg_logits, out.seg_logits.select(&perm));
    }

    #[test]
    fn attention_changes_the_confidence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut model = Banet::new(tiny(), &mut rng).unwrap();
        let x = unit_input(&mut rng, 1, 32, 32);
        let before = model.forward(&x, false).unwrap().seg_logits;
        model.visit_params("", &mut |name, p| {
            if name == "attention.bias" {
                p.value[0] += 3.0;
            }
        });
        let after = model.forward(&x, false).unwrap().seg_logits;
        assert_ne!(before, after);
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let build = || Banet::new(tiny(), &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = unit_input(&mut rng, 2, 32, 32);
        let a = build().forward(&x, false).unwrap();
        let b = build().forward(&x, false).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn parameter_count_grows_with_mining_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut base = Banet::new(tiny(), &mut rng).unwrap();
        let mut cfg = tiny();
        cfg.mining_channels *= 2;
        let mut wide = Banet::new(cfg, &mut rng).unwrap();
        assert!(wide.count_parameters() > base.count_parameters());
    }

    #[test]
    fn param_megabytes_is_exact() {
        assert_eq!(param_megabytes(1 << 18), 1.0);
    }

    // Scalar objective over both logit maps; finite differences through the
    // whole network on a couple of parameters from each part.
    #[test]
    fn end_to_end_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut model = Banet::new(tiny(), &mut rng).unwrap();
        let x = unit_input(&mut rng, 2, 64, 64);
        let r_seg = random(&mut rng, 2, 1, 64, 64);
        let r_att = random(&mut rng, 2, 1, 64, 64);
        let objective = |m: &mut Banet| -> f64 {
            let out = m.forward(&x, true).unwrap();
            let a: f64 = out.seg_logits.as_slice().iter().zip(r_seg.as_slice()).map(|(&p, &q)| p as f64 * q as f64).sum();
            let b: f64 = out.attention_logits.unwrap().as_slice().iter().zip(r_att.as_slice()).map(|(&p, &q)| p as f64 * q as f64).sum();
            a + b
        };
        model.zero_grad();
        objective(&mut model);
        model.backward(&r_seg, Some(&r_att)).unwrap();
        let mut picks: Vec<(alloc::string::String, f32)> = Vec::new();
        model.visit_params("", &mut |name, p| {
            picks.push((name.into(), p.grad[0]));
        });
        // Deep ReLU/BN stacks are kinked enough that a few central
        // differences land on a crease; the tail of the network is smooth.
        let step = 1e-3f32;
        let (mut checked, mut agreed) = (0, 0);
        for (name, analytic) in picks.iter() {
            let bump = |m: &mut Banet, d: f32| {
                m.visit_params("", &mut |n, p| {
                    if n == name {
                        p.value[0] += d;
                    }
                })
            };
            bump(&mut model, step);
            let plus = objective(&mut model);
            bump(&mut model, -2.0 * step);
            let minus = objective(&mut model);
            bump(&mut model, step);
            let numeric = (plus - minus) / (2.0 * step as f64);
            let tol = 5e-2 * (1.0 + numeric.abs().max(analytic.abs() as f64));
            let ok = (numeric - *analytic as f64).abs() <= tol;
            let smooth_tail = ["attention", "fusion", "head", "semantic.lateral3"].iter().any(|p| name.starts_with(p));
            assert!(ok || !smooth_tail, "{name}: {numeric} vs {analytic}");
            checked += 1;
            agreed += ok as usize;
        }
        assert!(checked > 50);
        assert!(agreed * 10 >= checked * 9, "{agreed} of {checked} agree");
    }
}
