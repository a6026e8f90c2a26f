//! Encoder-decoder network for pixel-wise regression and segmentation.
//!
//! Contraction: `depth` levels of two same-padded convolutions (conv, batch
//! norm, leaky ReLU) followed by 2x2 max pooling, doubling the channel count
//! each level starting at `base_filters`. A two-convolution bottleneck sits
//! below. Expansion mirrors the contraction with 4x4/stride-2 transposed
//! convolutions whose outputs are concatenated with the matching contraction
//! feature map. A final odd-kernel convolution with a sigmoid produces one
//! output channel in (0, 1).

use rand::SeedableRng;
use rand_distr::Distribution;

use crate::error::{Error, Result};
use crate::nn::adam::{adam_update, AdamHyper};
use crate::nn::layers::{
    batch_norm_backward, batch_norm_infer, batch_norm_train, concat_channels, conv2d,
    conv2d_backward, leaky_relu, leaky_relu_backward, max_pool2, max_pool2_backward, sigmoid,
    sigmoid_backward, split_channels, transposed_conv2, transposed_conv2_backward, BnCache,
};
use crate::nn::tensor::TensorGrid;
use crate::raster::{Raster, ValueDomain};

/// Batch-norm epsilon.
pub const BN_EPS: f64 = 1e-5;
/// Fraction of the previous running statistic kept per train-mode pass.
pub const BN_MOMENTUM: f64 = 0.9;

/// Architecture description.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct UNetConfig {
    /// Number of down-sampling steps.
    pub depth: usize,
    /// Channels after the first convolution block.
    pub base_filters: usize,
    /// Kernel size of the paired convolutions (odd).
    pub conv_kernel: usize,
    /// Negative-side slope of the leaky ReLU.
    pub leaky_slope: f64,
    /// Kernel size of the final convolution (odd).
    pub final_kernel: usize,
}

impl Default for UNetConfig {
    /// Full-scale configuration: five levels from 32 to 1024 filters, 5x5
    /// convolutions, 3x3 sigmoid head.
    fn default() -> Self {
        UNetConfig {
            depth: 5,
            base_filters: 32,
            conv_kernel: 5,
            leaky_slope: 0.01,
            final_kernel: 3,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Parameter("depth must be >= 1".into()));
        }
        if self.base_filters == 0 {
            return Err(Error::Parameter("base_filters must be >= 1".into()));
        }
        for (name, k) in [("conv_kernel", self.conv_kernel), ("final_kernel", self.final_kernel)] {
            if k == 0 || k % 2 == 0 {
                return Err(Error::Parameter(format!("{name} must be odd, got {k}")));
            }
        }
        if !self.leaky_slope.is_finite() || self.leaky_slope < 0.0 {
            return Err(Error::Parameter(format!(
                "leaky_slope must be >= 0, got {}",
                self.leaky_slope
            )));
        }
        Ok(())
    }

    /// Channels at contraction level `i` (0-based).
    pub fn filters(&self, level: usize) -> usize {
        self.base_filters << level
    }

    /// Input spatial dimensions must be divisible by this.
    pub fn required_divisor(&self) -> usize {
        1 << self.depth
    }
}

/// A trainable tensor with its Adam moment accumulators.
#[derive(Debug, Clone)]
pub struct WeightTensor {
    pub value: TensorGrid,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl WeightTensor {
    fn new(value: TensorGrid) -> Self {
        let len = value.len();
        WeightTensor {
            value,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// A trainable vector (bias or batch-norm affine) with Adam moments.
#[derive(Debug, Clone)]
pub struct WeightVec {
    pub value: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl WeightVec {
    fn new(value: Vec<f64>) -> Self {
        let len = value.len();
        WeightVec {
            value,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// Convolution + batch norm + leaky ReLU block.
#[derive(Debug, Clone)]
pub struct ConvUnit {
    pub w: WeightTensor,
    pub b: WeightVec,
    pub bn_gamma: WeightVec,
    pub bn_beta: WeightVec,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

/// Transposed-convolution upsampling block.
#[derive(Debug, Clone)]
pub struct UpUnit {
    pub w: WeightTensor,
    pub b: WeightVec,
}

/// One expansion level: upsample, concatenate the skip, two conv units.
#[derive(Debug, Clone)]
pub struct DecoderLevel {
    pub up: UpUnit,
    pub convs: [ConvUnit; 2],
}

/// All trainable state of a U-Net plus the shared Adam step counter.
/// Decoder levels are stored in application order (deepest first).
#[derive(Debug, Clone)]
pub struct ParameterSet {
    pub encoder: Vec<[ConvUnit; 2]>,
    pub bottleneck: [ConvUnit; 2],
    pub decoder: Vec<DecoderLevel>,
    pub final_w: WeightTensor,
    pub final_b: WeightVec,
    pub step: u64,
}

/// Gradients for one conv unit.
#[derive(Debug, Clone)]
pub struct ConvUnitGrad {
    pub w: TensorGrid,
    pub b: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Gradients for one decoder level.
#[derive(Debug, Clone)]
pub struct DecoderLevelGrad {
    pub up_w: TensorGrid,
    pub up_b: Vec<f64>,
    pub convs: [ConvUnitGrad; 2],
}

/// Gradient tree mirroring [`ParameterSet`].
#[derive(Debug, Clone)]
pub struct UNetGradients {
    pub encoder: Vec<[ConvUnitGrad; 2]>,
    pub bottleneck: [ConvUnitGrad; 2],
    pub decoder: Vec<DecoderLevelGrad>,
    pub final_w: TensorGrid,
    pub final_b: Vec<f64>,
}

/// He-initialized parameters: convolution weights drawn from
/// `Normal(0, sqrt(2 / fan_in))`, zero biases, unit batch-norm scale.
/// Deterministic for a given seed.
pub fn he_init(config: &UNetConfig, seed: u64) -> Result<ParameterSet> {
    config.validate()?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);

    fn draw_conv(
        rng: &mut rand_chacha::ChaCha8Rng,
        c_out: usize,
        c_in: usize,
        k: usize,
    ) -> TensorGrid {
        let std = (2.0 / (c_in * k * k) as f64).sqrt();
        let normal = rand_distr::Normal::new(0.0, std).expect("std is finite and positive");
        let data: Vec<f64> = (0..c_out * c_in * k * k)
            .map(|_| normal.sample(rng))
            .collect();
        TensorGrid::from_vec(c_out, c_in, k, k, data).expect("shape matches draw count")
    }

    let conv_unit = |w: TensorGrid| -> ConvUnit {
        let c_out = w.shape().0;
        ConvUnit {
            w: WeightTensor::new(w),
            b: WeightVec::new(vec![0.0; c_out]),
            bn_gamma: WeightVec::new(vec![1.0; c_out]),
            bn_beta: WeightVec::new(vec![0.0; c_out]),
            running_mean: vec![0.0; c_out],
            running_var: vec![1.0; c_out],
        }
    };

    let k = config.conv_kernel;
    let mut encoder = Vec::with_capacity(config.depth);
    for level in 0..config.depth {
        let c_in = if level == 0 { 1 } else { config.filters(level - 1) };
        let f = config.filters(level);
        let a = conv_unit(draw_conv(&mut rng, f, c_in, k));
        let b = conv_unit(draw_conv(&mut rng, f, f, k));
        encoder.push([a, b]);
    }

    let deepest = config.filters(config.depth - 1);
    let bott = config.filters(config.depth);
    let bottleneck = [
        conv_unit(draw_conv(&mut rng, bott, deepest, k)),
        conv_unit(draw_conv(&mut rng, bott, bott, k)),
    ];

    let mut decoder = Vec::with_capacity(config.depth);
    for level in (0..config.depth).rev() {
        let c_in = config.filters(level + 1);
        let f = config.filters(level);
        // Transposed kernels are (in, out, 4, 4); four taps contribute to
        // each output pixel, hence fan_in = c_in * 4.
        let std = (2.0 / (c_in * 4) as f64).sqrt();
        let normal = rand_distr::Normal::new(0.0, std).expect("std is finite and positive");
        let data: Vec<f64> = (0..c_in * f * 16).map(|_| normal.sample(&mut rng)).collect();
        let up_w = TensorGrid::from_vec(c_in, f, 4, 4, data).expect("shape matches draw count");
        let up = UpUnit {
            w: WeightTensor::new(up_w),
            b: WeightVec::new(vec![0.0; f]),
        };
        let a = conv_unit(draw_conv(&mut rng, f, 2 * f, k));
        let b = conv_unit(draw_conv(&mut rng, f, f, k));
        decoder.push(DecoderLevel { up, convs: [a, b] });
    }

    let final_w = draw_conv(&mut rng, 1, config.base_filters, config.final_kernel);
    Ok(ParameterSet {
        encoder,
        bottleneck,
        decoder,
        final_w: WeightTensor::new(final_w),
        final_b: WeightVec::new(vec![0.0; 1]),
        step: 0,
    })
}

impl ParameterSet {
    /// One Adam step over every trainable tensor; increments the shared step
    /// counter. Gradient and parameter trees must mirror each other.
    pub fn adam_step(&mut self, grads: &UNetGradients, hyper: &AdamHyper) -> Result<()> {
        if grads.encoder.len() != self.encoder.len() || grads.decoder.len() != self.decoder.len() {
            return Err(Error::Dimension(
                "gradient tree does not mirror the parameter set".into(),
            ));
        }
        self.step += 1;
        let t = self.step;

        fn update_unit(unit: &mut ConvUnit, g: &ConvUnitGrad, t: u64, hyper: &AdamHyper) -> Result<()> {
            if g.w.len() != unit.w.value.len() || g.b.len() != unit.b.value.len() {
                return Err(Error::Dimension("conv gradient shape mismatch".into()));
            }
            adam_update(unit.w.value.data_mut(), &mut unit.w.m, &mut unit.w.v, g.w.data(), t, hyper);
            adam_update(&mut unit.b.value, &mut unit.b.m, &mut unit.b.v, &g.b, t, hyper);
            adam_update(
                &mut unit.bn_gamma.value,
                &mut unit.bn_gamma.m,
                &mut unit.bn_gamma.v,
                &g.gamma,
                t,
                hyper,
            );
            adam_update(
                &mut unit.bn_beta.value,
                &mut unit.bn_beta.m,
                &mut unit.bn_beta.v,
                &g.beta,
                t,
                hyper,
            );
            Ok(())
        }

        for (units, gs) in self.encoder.iter_mut().zip(&grads.encoder) {
            for (unit, g) in units.iter_mut().zip(gs) {
                update_unit(unit, g, t, hyper)?;
            }
        }
        for (unit, g) in self.bottleneck.iter_mut().zip(&grads.bottleneck) {
            update_unit(unit, g, t, hyper)?;
        }
        for (level, g) in self.decoder.iter_mut().zip(&grads.decoder) {
            if g.up_w.len() != level.up.w.value.len() {
                return Err(Error::Dimension("transposed conv gradient shape mismatch".into()));
            }
            adam_update(
                level.up.w.value.data_mut(),
                &mut level.up.w.m,
                &mut level.up.w.v,
                g.up_w.data(),
                t,
                hyper,
            );
            adam_update(
                &mut level.up.b.value,
                &mut level.up.b.m,
                &mut level.up.b.v,
                &g.up_b,
                t,
                hyper,
            );
            for (unit, gu) in level.convs.iter_mut().zip(&g.convs) {
                update_unit(unit, gu, t, hyper)?;
            }
        }
        adam_update(
            self.final_w.value.data_mut(),
            &mut self.final_w.m,
            &mut self.final_w.v,
            grads.final_w.data(),
            t,
            hyper,
        );
        adam_update(
            &mut self.final_b.value,
            &mut self.final_b.m,
            &mut self.final_b.v,
            &grads.final_b,
            t,
            hyper,
        );
        Ok(())
    }

    /// Total number of trainable values.
    pub fn parameter_count(&self) -> usize {
        let unit = |u: &ConvUnit| u.w.value.len() + u.b.value.len() + u.bn_gamma.value.len() + u.bn_beta.value.len();
        let mut total = 0;
        for units in &self.encoder {
            total += unit(&units[0]) + unit(&units[1]);
        }
        total += unit(&self.bottleneck[0]) + unit(&self.bottleneck[1]);
        for level in &self.decoder {
            total += level.up.w.value.len() + level.up.b.value.len();
            total += unit(&level.convs[0]) + unit(&level.convs[1]);
        }
        total + self.final_w.value.len() + self.final_b.value.len()
    }
}

struct ConvUnitCache {
    x: TensorGrid,
    bn: BnCache,
    bn_out: TensorGrid,
}

struct EncoderLevelCache {
    units: [ConvUnitCache; 2],
    pool_shape: (usize, usize, usize, usize),
    pool_argmax: Vec<u8>,
}

struct DecoderLevelCache {
    up_x: TensorGrid,
    up_channels: usize,
    units: [ConvUnitCache; 2],
}

/// Intermediate activations of a train-mode forward pass.
pub struct UNetCache {
    encoder: Vec<EncoderLevelCache>,
    bottleneck: [ConvUnitCache; 2],
    decoder: Vec<DecoderLevelCache>,
    final_x: TensorGrid,
    output: TensorGrid,
}

/// Network role: what the single output channel means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    /// Stage 1: predicts a normalized distance map.
    DistanceRegressor,
    /// Stage 2 / baselines: predicts a front or zone probability.
    FrontSegmenter,
}

impl ModelRole {
    pub fn output_domain(self) -> ValueDomain {
        match self {
            ModelRole::DistanceRegressor => ValueDomain::Distance01,
            ModelRole::FrontSegmenter => ValueDomain::Probability01,
        }
    }
}

/// Config + parameters.
#[derive(Debug, Clone)]
pub struct UNet {
    pub config: UNetConfig,
    pub params: ParameterSet,
}

impl UNet {
    pub fn init(config: UNetConfig, seed: u64) -> Result<Self> {
        Ok(UNet {
            params: he_init(&config, seed)?,
            config,
        })
    }

    fn check_input(&self, x: &TensorGrid) -> Result<()> {
        let (_, c, h, w) = x.shape();
        if c != 1 {
            return Err(Error::Dimension(format!("network input must have 1 channel, got {c}")));
        }
        let d = self.config.required_divisor();
        if h % d != 0 || w % d != 0 {
            return Err(Error::Dimension(format!(
                "input {h}x{w} not divisible by 2^depth = {d}"
            )));
        }
        Ok(())
    }

    fn conv_unit_infer(unit: &ConvUnit, x: &TensorGrid, slope: f64) -> Result<TensorGrid> {
        let pre = conv2d(x, &unit.w.value, &unit.b.value)?;
        let normed = batch_norm_infer(
            &pre,
            &unit.bn_gamma.value,
            &unit.bn_beta.value,
            &unit.running_mean,
            &unit.running_var,
            BN_EPS,
        )?;
        Ok(leaky_relu(&normed, slope))
    }

    fn conv_unit_train(
        unit: &mut ConvUnit,
        x: &TensorGrid,
        slope: f64,
    ) -> Result<(TensorGrid, ConvUnitCache)> {
        let pre = conv2d(x, &unit.w.value, &unit.b.value)?;
        let (normed, stats, cache) =
            batch_norm_train(&pre, &unit.bn_gamma.value, &unit.bn_beta.value, BN_EPS)?;
        for (r, s) in unit.running_mean.iter_mut().zip(&stats.mean) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * s;
        }
        for (r, s) in unit.running_var.iter_mut().zip(&stats.var) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * s;
        }
        let out = leaky_relu(&normed, slope);
        Ok((
            out,
            ConvUnitCache {
                x: x.clone(),
                bn: cache,
                bn_out: normed,
            },
        ))
    }

    /// Inference pass: batch norm uses running statistics, no cache.
    pub fn forward_infer(&self, x: &TensorGrid) -> Result<TensorGrid> {
        self.check_input(x)?;
        let slope = self.config.leaky_slope;
        let depth = self.config.depth;

        let mut skips = Vec::with_capacity(depth);
        let mut cur = x.clone();
        for level in 0..depth {
            for unit in &self.params.encoder[level] {
                cur = Self::conv_unit_infer(unit, &cur, slope)?;
            }
            skips.push(cur.clone());
            cur = max_pool2(&cur)?.0;
        }
        for unit in &self.params.bottleneck {
            cur = Self::conv_unit_infer(unit, &cur, slope)?;
        }
        for (j, level) in (0..depth).rev().enumerate() {
            let block = &self.params.decoder[j];
            let up_out = transposed_conv2(&cur, &block.up.w.value, &block.up.b.value)?;
            cur = concat_channels(&up_out, &skips[level])?;
            for unit in &block.convs {
                cur = Self::conv_unit_infer(unit, &cur, slope)?;
            }
        }
        let logits = conv2d(&cur, &self.params.final_w.value, &self.params.final_b.value)?;
        Ok(sigmoid(&logits))
    }

    /// Train-mode pass: updates batch-norm running statistics and returns
    /// the activation cache for [`UNet::backward`].
    pub fn forward_train(&mut self, x: &TensorGrid) -> Result<(TensorGrid, UNetCache)> {
        self.check_input(x)?;
        let slope = self.config.leaky_slope;
        let depth = self.config.depth;

        let mut enc_caches = Vec::with_capacity(depth);
        let mut skips = Vec::with_capacity(depth);
        let mut cur = x.clone();
        for level in 0..depth {
            let units = &mut self.params.encoder[level];
            let (out_a, cache_a) = Self::conv_unit_train(&mut units[0], &cur, slope)?;
            let (out_b, cache_b) = Self::conv_unit_train(&mut units[1], &out_a, slope)?;
            cur = out_b;
            skips.push(cur.clone());
            let pool_shape = cur.shape();
            let (pooled, argmax) = max_pool2(&cur)?;
            cur = pooled;
            enc_caches.push(EncoderLevelCache {
                units: [cache_a, cache_b],
                pool_shape,
                pool_argmax: argmax,
            });
        }

        let (out_a, bott_a) = Self::conv_unit_train(&mut self.params.bottleneck[0], &cur, slope)?;
        let (out_b, bott_b) = Self::conv_unit_train(&mut self.params.bottleneck[1], &out_a, slope)?;
        cur = out_b;

        let mut dec_caches = Vec::with_capacity(depth);
        for (j, level) in (0..depth).rev().enumerate() {
            let block = &mut self.params.decoder[j];
            let up_x = cur;
            let up_out = transposed_conv2(&up_x, &block.up.w.value, &block.up.b.value)?;
            let up_channels = up_out.shape().1;
            cur = concat_channels(&up_out, &skips[level])?;
            let (out_a, cache_a) = Self::conv_unit_train(&mut block.convs[0], &cur, slope)?;
            let (out_b, cache_b) = Self::conv_unit_train(&mut block.convs[1], &out_a, slope)?;
            cur = out_b;
            dec_caches.push(DecoderLevelCache {
                up_x,
                up_channels,
                units: [cache_a, cache_b],
            });
        }

        let final_x = cur;
        let logits = conv2d(&final_x, &self.params.final_w.value, &self.params.final_b.value)?;
        let output = sigmoid(&logits);
        let cache = UNetCache {
            encoder: enc_caches,
            bottleneck: [bott_a, bott_b],
            decoder: dec_caches,
            final_x,
            output: output.clone(),
        };
        Ok((output, cache))
    }

    fn conv_unit_backward(
        unit: &ConvUnit,
        cache: &ConvUnitCache,
        grad: &TensorGrid,
        slope: f64,
    ) -> Result<(TensorGrid, ConvUnitGrad)> {
        let g_bn_out = leaky_relu_backward(&cache.bn_out, grad, slope);
        let (g_pre, dgamma, dbeta) = batch_norm_backward(&cache.bn, &g_bn_out);
        let (gx, gw, gb) = conv2d_backward(&cache.x, &unit.w.value, &g_pre)?;
        Ok((
            gx,
            ConvUnitGrad {
                w: gw,
                b: gb,
                gamma: dgamma,
                beta: dbeta,
            },
        ))
    }

    /// Backpropagates a gradient with respect to the network output through
    /// the cached activations, producing the full gradient tree.
    pub fn backward(&self, cache: &UNetCache, grad_output: &TensorGrid) -> Result<UNetGradients> {
        let slope = self.config.leaky_slope;
        let depth = self.config.depth;

        let g_logits = sigmoid_backward(&cache.output, grad_output);
        let (mut cur, final_gw, final_gb) =
            conv2d_backward(&cache.final_x, &self.params.final_w.value, &g_logits)?;

        // Decoder levels in reverse application order (shallowest first).
        let mut dec_grads: Vec<DecoderLevelGrad> = Vec::with_capacity(depth);
        let mut skip_grads: Vec<Option<TensorGrid>> = (0..depth).map(|_| None).collect();
        for (j, level) in (0..depth).rev().enumerate().collect::<Vec<_>>().into_iter().rev() {
            let block = &self.params.decoder[j];
            let dcache = &cache.decoder[j];
            let (g_after_b, gu_b) =
                Self::conv_unit_backward(&block.convs[1], &dcache.units[1], &cur, slope)?;
            let (g_concat, gu_a) =
                Self::conv_unit_backward(&block.convs[0], &dcache.units[0], &g_after_b, slope)?;
            let (g_up_out, g_skip) = split_channels(&g_concat, dcache.up_channels);
            skip_grads[level] = Some(g_skip);
            let (g_up_x, g_up_w, g_up_b) =
                transposed_conv2_backward(&dcache.up_x, &block.up.w.value, &g_up_out)?;
            cur = g_up_x;
            dec_grads.push(DecoderLevelGrad {
                up_w: g_up_w,
                up_b: g_up_b,
                convs: [gu_a, gu_b],
            });
        }
        dec_grads.reverse(); // application order, mirroring params.decoder

        let (g_bott, gb_b) =
            Self::conv_unit_backward(&self.params.bottleneck[1], &cache.bottleneck[1], &cur, slope)?;
        let (mut cur, gb_a) =
            Self::conv_unit_backward(&self.params.bottleneck[0], &cache.bottleneck[0], &g_bott, slope)?;

        let mut enc_grads: Vec<[ConvUnitGrad; 2]> = Vec::with_capacity(depth);
        for level in (0..depth).rev() {
            let ecache = &cache.encoder[level];
            let mut g_pre_pool = max_pool2_backward(ecache.pool_shape, &ecache.pool_argmax, &cur);
            if let Some(g_skip) = &skip_grads[level] {
                for (a, b) in g_pre_pool.data_mut().iter_mut().zip(g_skip.data()) {
                    *a += b;
                }
            }
            let units = &self.params.encoder[level];
            let (g_after_a, gu_b) =
                Self::conv_unit_backward(&units[1], &ecache.units[1], &g_pre_pool, slope)?;
            let (g_in, gu_a) =
                Self::conv_unit_backward(&units[0], &ecache.units[0], &g_after_a, slope)?;
            cur = g_in;
            enc_grads.push([gu_a, gu_b]);
        }
        enc_grads.reverse();

        Ok(UNetGradients {
            encoder: enc_grads,
            bottleneck: [gb_a, gb_b],
            decoder: dec_grads,
            final_w: final_gw,
            final_b: final_gb,
        })
    }

    /// Single-image inference: wraps the raster in a batch of one and tags
    /// the output with the role's value domain.
    pub fn predict(&self, image: &Raster, role: ModelRole) -> Result<Raster> {
        let x = TensorGrid::from_rasters(&[image])?;
        let y = self.forward_infer(&x)?;
        y.to_raster(0, image.resolution(), role.output_domain())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn he_init_biases_zero_and_deterministic() {
        let config = UNetConfig {
            depth: 2,
            base_filters: 4,
            conv_kernel: 3,
            leaky_slope: 0.01,
            final_kernel: 3,
        };
        let a = he_init(&config, 42).unwrap();
        let b = he_init(&config, 42).unwrap();
        assert_eq!(a.encoder[0][0].w.value.data(), b.encoder[0][0].w.value.data());
        assert_eq!(a.final_w.value.data(), b.final_w.value.data());
        assert!(a.encoder[1][0].b.value.iter().all(|&v| v == 0.0));
        assert!(a.bottleneck[0].bn_gamma.value.iter().all(|&v| v == 1.0));
        let c = he_init(&config, 43).unwrap();
        assert_ne!(a.encoder[0][0].w.value.data(), c.encoder[0][0].w.value.data());
    }

    #[test]
    fn he_init_variance_matches_fan_in() {
        // 5x5 kernel over 32 input channels, 32 outputs: 25600 draws.
        let config = UNetConfig {
            depth: 1,
            base_filters: 32,
            conv_kernel: 5,
            leaky_slope: 0.01,
            final_kernel: 3,
        };
        let p = he_init(&config, 7).unwrap();
        let w = &p.encoder[0][1].w.value; // 32 -> 32, 5x5
        assert_eq!(w.shape(), (32, 32, 5, 5));
        let n = w.len() as f64;
        let mean: f64 = w.data().iter().sum::<f64>() / n;
        let var: f64 = w.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let expected = 2.0 / (5.0 * 5.0 * 32.0);
        assert!(
            (var - expected).abs() / expected < 0.2,
            "sample variance {var} vs expected {expected}"
        );
    }

    #[test]
    fn forward_shape_contract() {
        let config = UNetConfig {
            depth: 3,
            base_filters: 2,
            conv_kernel: 3,
            leaky_slope: 0.01,
            final_kernel: 3,
        };
        let net = UNet::init(config, 1).unwrap();
        let x = TensorGrid::zeros(2, 1, 64, 64);
        let y = net.forward_infer(&x).unwrap();
        assert_eq!(y.shape(), (2, 1, 64, 64));
        for &v in y.data() {
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn forward_rejects_non_divisible_input() {
        let config = UNetConfig {
            depth: 3,
            base_filters: 2,
            conv_kernel: 3,
            leaky_slope: 0.01,
            final_kernel: 3,
        };
        let net = UNet::init(config, 1).unwrap();
        let x = TensorGrid::zeros(1, 1, 60, 64);
        assert!(matches!(net.forward_infer(&x), Err(Error::Dimension(_))));
    }

    #[test]
    fn zero_weights_give_constant_sigmoid_bias() {
        let config = UNetConfig {
            depth: 1,
            base_filters: 2,
            conv_kernel: 3,
            leaky_slope: 0.01,
            final_kernel: 3,
        };
        let mut net = UNet::init(config, 1).unwrap();
        // Zero every weight; biases are already zero.
        for units in net.params.encoder.iter_mut() {
            for u in units.iter_mut() {
                u.w.value.data_mut().fill(0.0);
            }
        }
        for u in net.params.bottleneck.iter_mut() {
            u.w.value.data_mut().fill(0.0);
        }
        for level in net.params.decoder.iter_mut() {
            level.up.w.value.data_mut().fill(0.0);
            for u in level.convs.iter_mut() {
                u.w.value.data_mut().fill(0.0);
            }
        }
        net.params.final_w.value.data_mut().fill(0.0);
        let x = TensorGrid::from_vec(1, 1, 8, 8, (0..64).map(|i| i as f64 / 64.0).collect()).unwrap();
        let y = net.forward_infer(&x).unwrap();
        for &v in y.data() {
            assert!((v - 0.5).abs() < 1e-12); // sigmoid(0)
        }
    }

    #[test]
    fn predict_deterministic() {
        let config = UNetConfig {
            depth: 2,
            base_filters: 2,
            conv_kernel: 3,
            leaky_slope: 0.01,
            final_kernel: 3,
        };
        let net = UNet::init(config, 5).unwrap();
        let img = Raster::new(
            8,
            8,
            (0..64).map(|i| i as f64 / 64.0).collect(),
            crate::raster::Resolution::isotropic(20.0),
            ValueDomain::Intensity01,
        )
        .unwrap();
        let a = net.predict(&img, ModelRole::DistanceRegressor).unwrap();
        let b = net.predict(&img, ModelRole::DistanceRegressor).unwrap();
        assert_eq!(a.pixels(), b.pixels());
        assert_eq!(a.domain(), ValueDomain::Distance01);
        assert!(a.pixels().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
