//! Compact residual CNN with explicit forward/backward passes.
//!
//! Convolutions run as im2col + GEMM in f64; everything is deterministic:
//! seeded init, fixed iteration order, no fused-math shortcuts. The network
//! is stem conv -> two stride-2 residual blocks -> global average pooling,
//! emitting a `feature_dim`-wide vector per image (no classification head).

use ndarray::{Array1, Array2, Array3};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub input_channels: usize,
    /// Stem width; the two blocks use 2x and 4x this width.
    pub base_width: usize,
    /// Output width, always `4 * base_width`.
    pub feature_dim: usize,
}

impl ArchDescriptor {
    pub fn for_feature_dim(input_channels: usize, feature_dim: usize) -> Result<Self> {
        if feature_dim < 8 || feature_dim % 4 != 0 {
            return Err(Error::validation(format!(
                "feature_dim must be a multiple of 4 and >= 8, got {feature_dim}"
            )));
        }
        Ok(ArchDescriptor {
            input_channels,
            base_width: feature_dim / 4,
            feature_dim,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    /// `(out_ch, in_ch * k * k)`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub ksize: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    fn new(in_ch: usize, out_ch: usize, ksize: usize, stride: usize, pad: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = (in_ch * ksize * ksize) as f64;
        let std = (2.0 / fan_in).sqrt();
        let weight = Array2::from_shape_fn((out_ch, in_ch * ksize * ksize), |_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        });
        Conv2d {
            weight,
            bias: Array1::zeros(out_ch),
            in_ch,
            out_ch,
            ksize,
            stride,
            pad,
        }
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.ksize) / self.stride + 1,
            (w + 2 * self.pad - self.ksize) / self.stride + 1,
        )
    }

    /// `(C, H, W)` -> patch matrix `(H_out * W_out, C * k * k)`.
    fn im2col(&self, input: &Array3<f64>) -> Array2<f64> {
        let (c, h, w) = input.dim();
        let (oh, ow) = self.out_hw(h, w);
        let k = self.ksize;
        let mut cols = Array2::zeros((oh * ow, c * k * k));
        for oy in 0..oh {
            for ox in 0..ow {
                let row = oy * ow + ox;
                let base_y = (oy * self.stride) as i64 - self.pad as i64;
                let base_x = (ox * self.stride) as i64 - self.pad as i64;
                for ch in 0..c {
                    for ky in 0..k {
                        let sy = base_y + ky as i64;
                        if sy < 0 || sy >= h as i64 {
                            continue;
                        }
                        for kx in 0..k {
                            let sx = base_x + kx as i64;
                            if sx < 0 || sx >= w as i64 {
                                continue;
                            }
                            cols[[row, (ch * k + ky) * k + kx]] = input[[ch, sy as usize, sx as usize]];
                        }
                    }
                }
            }
        }
        cols
    }

    pub fn forward(&self, input: &Array3<f64>) -> Array3<f64> {
        let (_, h, w) = input.dim();
        let (oh, ow) = self.out_hw(h, w);
        let cols = self.im2col(input);
        let out2d = cols.dot(&self.weight.t()); // (oh*ow, out_ch)
        let mut out = Array3::zeros((self.out_ch, oh, ow));
        for oy in 0..oh {
            for ox in 0..ow {
                let row = oy * ow + ox;
                for oc in 0..self.out_ch {
                    out[[oc, oy, ox]] = out2d[[row, oc]] + self.bias[oc];
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&self, input: &Array3<f64>, d_out: &Array3<f64>, grad: &mut ConvGrad) -> Array3<f64> {
        let (c, h, w) = input.dim();
        let (oc, oh, ow) = d_out.dim();
        let k = self.ksize;
        let mut d_out2d = Array2::zeros((oh * ow, oc));
        for ch in 0..oc {
            for oy in 0..oh {
                for ox in 0..ow {
                    d_out2d[[oy * ow + ox, ch]] = d_out[[ch, oy, ox]];
                }
            }
        }
        let cols = self.im2col(input);
        grad.d_weight = &grad.d_weight + &d_out2d.t().dot(&cols);
        for ch in 0..oc {
            grad.d_bias[ch] += d_out2d.column(ch).sum();
        }

        // scatter column gradients back to input positions
        let d_cols = d_out2d.dot(&self.weight); // (oh*ow, c*k*k)
        let mut d_input = Array3::zeros((c, h, w));
        for oy in 0..oh {
            for ox in 0..ow {
                let row = oy * ow + ox;
                let base_y = (oy * self.stride) as i64 - self.pad as i64;
                let base_x = (ox * self.stride) as i64 - self.pad as i64;
                for ch in 0..c {
                    for ky in 0..k {
                        let sy = base_y + ky as i64;
                        if sy < 0 || sy >= h as i64 {
                            continue;
                        }
                        for kx in 0..k {
                            let sx = base_x + kx as i64;
                            if sx < 0 || sx >= w as i64 {
                                continue;
                            }
                            d_input[[ch, sy as usize, sx as usize]] +=
                                d_cols[[row, (ch * k + ky) * k + kx]];
                        }
                    }
                }
            }
        }
        d_input
    }
}

#[derive(Debug, Clone)]
pub struct ConvGrad {
    pub d_weight: Array2<f64>,
    pub d_bias: Array1<f64>,
}

impl ConvGrad {
    fn zeros_like(conv: &Conv2d) -> Self {
        ConvGrad {
            d_weight: Array2::zeros(conv.weight.dim()),
            d_bias: Array1::zeros(conv.bias.len()),
        }
    }

    fn add(&mut self, other: &ConvGrad) {
        self.d_weight = &self.d_weight + &other.d_weight;
        self.d_bias = &self.d_bias + &other.d_bias;
    }
}

#[derive(Debug, Clone)]
pub struct ResBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub shortcut: Conv2d,
}

impl ResBlock {
    fn new(in_ch: usize, out_ch: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        ResBlock {
            conv1: Conv2d::new(in_ch, out_ch, 3, stride, 1, rng),
            conv2: Conv2d::new(out_ch, out_ch, 3, 1, 1, rng),
            shortcut: Conv2d::new(in_ch, out_ch, 1, stride, 0, rng),
        }
    }
}

const NORM_EPS: f64 = 1e-5;

/// Per-sample, per-channel normalization over the spatial map (instance
/// norm, no affine). Keeps activation scale bounded so the contrastive
/// gradient has a usable step size, and stays deterministic regardless of
/// batch composition. Returns `(x_hat, sigma)`.
fn instance_norm(x: &Array3<f64>) -> (Array3<f64>, Vec<f64>) {
    let (c, h, w) = x.dim();
    let m = (h * w) as f64;
    let mut out = Array3::zeros((c, h, w));
    let mut sigmas = Vec::with_capacity(c);
    for ch in 0..c {
        let mut mean = 0.0;
        for y in 0..h {
            for xx in 0..w {
                mean += x[[ch, y, xx]];
            }
        }
        mean /= m;
        let mut var = 0.0;
        for y in 0..h {
            for xx in 0..w {
                let d = x[[ch, y, xx]] - mean;
                var += d * d;
            }
        }
        var /= m;
        let sigma = (var + NORM_EPS).sqrt();
        for y in 0..h {
            for xx in 0..w {
                out[[ch, y, xx]] = (x[[ch, y, xx]] - mean) / sigma;
            }
        }
        sigmas.push(sigma);
    }
    (out, sigmas)
}

/// Gradient through instance norm:
/// `dx = (g - mean(g) - x_hat * mean(g * x_hat)) / sigma` per channel.
fn instance_norm_backward(x_hat: &Array3<f64>, sigmas: &[f64], d_out: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = x_hat.dim();
    let m = (h * w) as f64;
    let mut dx = Array3::zeros((c, h, w));
    for ch in 0..c {
        let mut g_mean = 0.0;
        let mut gx_mean = 0.0;
        for y in 0..h {
            for xx in 0..w {
                g_mean += d_out[[ch, y, xx]];
                gx_mean += d_out[[ch, y, xx]] * x_hat[[ch, y, xx]];
            }
        }
        g_mean /= m;
        gx_mean /= m;
        for y in 0..h {
            for xx in 0..w {
                dx[[ch, y, xx]] = (d_out[[ch, y, xx]] - g_mean - x_hat[[ch, y, xx]] * gx_mean)
                    / sigmas[ch];
            }
        }
    }
    dx
}

struct NormTape {
    x_hat: Array3<f64>,
    sigmas: Vec<f64>,
}

struct BlockTape {
    input: Array3<f64>,
    norm1: NormTape,
    act1: Array3<f64>,
    norm2: NormTape,
    norm_sc: NormTape,
    pre_out: Array3<f64>,
}

pub struct Tape {
    input: Array3<f64>,
    stem_norm: NormTape,
    blocks: Vec<BlockTape>,
    /// spatial size of the pooled map
    pool_hw: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct Net {
    pub arch: ArchDescriptor,
    pub stem: Conv2d,
    pub blocks: Vec<ResBlock>,
}

#[derive(Debug, Clone)]
pub struct NetGrads {
    pub stem: ConvGrad,
    pub blocks: Vec<(ConvGrad, ConvGrad, ConvGrad)>,
}

impl NetGrads {
    pub fn zeros_like(net: &Net) -> Self {
        NetGrads {
            stem: ConvGrad::zeros_like(&net.stem),
            blocks: net
                .blocks
                .iter()
                .map(|b| {
                    (
                        ConvGrad::zeros_like(&b.conv1),
                        ConvGrad::zeros_like(&b.conv2),
                        ConvGrad::zeros_like(&b.shortcut),
                    )
                })
                .collect(),
        }
    }

    pub fn add(&mut self, other: &NetGrads) {
        self.stem.add(&other.stem);
        for (mine, theirs) in self.blocks.iter_mut().zip(&other.blocks) {
            mine.0.add(&theirs.0);
            mine.1.add(&theirs.1);
            mine.2.add(&theirs.2);
        }
    }
}

fn relu(x: &Array3<f64>) -> Array3<f64> {
    x.map(|&v| if v > 0.0 { v } else { 0.0 })
}

fn relu_backward(pre: &Array3<f64>, d_out: &Array3<f64>) -> Array3<f64> {
    let mut d = d_out.clone();
    for (g, &p) in d.iter_mut().zip(pre.iter()) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
    d
}

impl Net {
    pub fn new(arch: ArchDescriptor, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = arch.base_width;
        let stem = Conv2d::new(arch.input_channels, w, 3, 1, 1, &mut rng);
        let blocks = vec![
            ResBlock::new(w, 2 * w, 2, &mut rng),
            ResBlock::new(2 * w, 4 * w, 2, &mut rng),
        ];
        Net { arch, stem, blocks }
    }

    pub fn feature_dim(&self) -> usize {
        self.arch.feature_dim
    }

    /// Forward pass keeping intermediate activations for backprop.
    pub fn forward(&self, image_chw: &Array3<f64>) -> (Array1<f64>, Tape) {
        let stem_pre = self.stem.forward(image_chw);
        let (stem_hat, stem_sigmas) = instance_norm(&stem_pre);
        let mut cur = relu(&stem_hat);
        let stem_norm = NormTape {
            x_hat: stem_hat,
            sigmas: stem_sigmas,
        };
        let mut block_tapes = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let pre1 = block.conv1.forward(&cur);
            let (hat1, sigmas1) = instance_norm(&pre1);
            let act1 = relu(&hat1);
            let pre2 = block.conv2.forward(&act1);
            let (hat2, sigmas2) = instance_norm(&pre2);
            let skip = block.shortcut.forward(&cur);
            let (hat_sc, sigmas_sc) = instance_norm(&skip);
            let pre_out = &hat2 + &hat_sc;
            let out = relu(&pre_out);
            block_tapes.push(BlockTape {
                input: cur,
                norm1: NormTape { x_hat: hat1, sigmas: sigmas1 },
                act1,
                norm2: NormTape { x_hat: hat2, sigmas: sigmas2 },
                norm_sc: NormTape { x_hat: hat_sc, sigmas: sigmas_sc },
                pre_out,
            });
            cur = out;
        }
        let (c, h, w) = cur.dim();
        let mut features = Array1::zeros(c);
        let denom = (h * w) as f64;
        for ch in 0..c {
            let mut sum = 0.0;
            for y in 0..h {
                for x in 0..w {
                    sum += cur[[ch, y, x]];
                }
            }
            features[ch] = sum / denom;
        }
        let tape = Tape {
            input: image_chw.clone(),
            stem_norm,
            blocks: block_tapes,
            pool_hw: (h, w),
        };
        (features, tape)
    }

    /// Forward pass without a tape, for inference.
    pub fn forward_features(&self, image_chw: &Array3<f64>) -> Array1<f64> {
        let mut cur = relu(&instance_norm(&self.stem.forward(image_chw)).0);
        for block in &self.blocks {
            let act1 = relu(&instance_norm(&block.conv1.forward(&cur)).0);
            let main = instance_norm(&block.conv2.forward(&act1)).0;
            let skip = instance_norm(&block.shortcut.forward(&cur)).0;
            cur = relu(&(&main + &skip));
        }
        let (c, h, w) = cur.dim();
        let denom = (h * w) as f64;
        Array1::from_shape_fn(c, |ch| {
            let mut sum = 0.0;
            for y in 0..h {
                for x in 0..w {
                    sum += cur[[ch, y, x]];
                }
            }
            sum / denom
        })
    }

    /// Backprop from a feature-vector gradient; accumulates into `grads`.
    pub fn backward(&self, tape: &Tape, d_features: &Array1<f64>, grads: &mut NetGrads) {
        let (h, w) = tape.pool_hw;
        let c = d_features.len();
        let scale = 1.0 / (h * w) as f64;
        let mut d_cur = Array3::from_shape_fn((c, h, w), |(ch, _, _)| d_features[ch] * scale);

        for (bi, block) in self.blocks.iter().enumerate().rev() {
            let bt = &tape.blocks[bi];
            let d_pre_out = relu_backward(&bt.pre_out, &d_cur);
            let (g1, g2, gs) = &mut grads.blocks[bi];

            let d_pre2 = instance_norm_backward(&bt.norm2.x_hat, &bt.norm2.sigmas, &d_pre_out);
            let d_act1 = block.conv2.backward(&bt.act1, &d_pre2, g2);
            let d_hat1 = relu_backward(&bt.norm1.x_hat, &d_act1);
            let d_pre1 = instance_norm_backward(&bt.norm1.x_hat, &bt.norm1.sigmas, &d_hat1);
            let d_in_main = block.conv1.backward(&bt.input, &d_pre1, g1);

            let d_skip = instance_norm_backward(&bt.norm_sc.x_hat, &bt.norm_sc.sigmas, &d_pre_out);
            let d_in_skip = block.shortcut.backward(&bt.input, &d_skip, gs);
            d_cur = &d_in_main + &d_in_skip;
        }

        let d_stem_hat = relu_backward(&tape.stem_norm.x_hat, &d_cur);
        let d_stem_pre =
            instance_norm_backward(&tape.stem_norm.x_hat, &tape.stem_norm.sigmas, &d_stem_hat);
        self.stem.backward(&tape.input, &d_stem_pre, &mut grads.stem);
    }

    /// Named parameter tensors in a stable order (for SGD and checkpoints).
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = vec!["stem.weight".to_string(), "stem.bias".to_string()];
        for i in 0..self.blocks.len() {
            for part in ["conv1", "conv2", "shortcut"] {
                names.push(format!("block{i}.{part}.weight"));
                names.push(format!("block{i}.{part}.bias"));
            }
        }
        names
    }

    pub fn visit_params(&self, mut f: impl FnMut(&str, &[f64])) {
        f("stem.weight", self.stem.weight.as_slice().unwrap());
        f("stem.bias", self.stem.bias.as_slice().unwrap());
        for (i, b) in self.blocks.iter().enumerate() {
            for (part, conv) in [("conv1", &b.conv1), ("conv2", &b.conv2), ("shortcut", &b.shortcut)] {
                f(&format!("block{i}.{part}.weight"), conv.weight.as_slice().unwrap());
                f(&format!("block{i}.{part}.bias"), conv.bias.as_slice().unwrap());
            }
        }
    }

    pub fn visit_params_mut(&mut self, mut f: impl FnMut(&str, &mut [f64])) {
        f("stem.weight", self.stem.weight.as_slice_mut().unwrap());
        f("stem.bias", self.stem.bias.as_slice_mut().unwrap());
        for (i, b) in self.blocks.iter_mut().enumerate() {
            for (part, conv) in [
                ("conv1", &mut b.conv1),
                ("conv2", &mut b.conv2),
                ("shortcut", &mut b.shortcut),
            ] {
                f(&format!("block{i}.{part}.weight"), conv.weight.as_slice_mut().unwrap());
                f(&format!("block{i}.{part}.bias"), conv.bias.as_slice_mut().unwrap());
            }
        }
    }
}

/// SGD with momentum and decoupled-from-nothing classic weight decay
/// (`v = m*v + g + wd*w; w -= lr*v`).
pub struct Sgd {
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    velocity: NetGrads,
}

impl Sgd {
    pub fn new(net: &Net, lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            lr,
            momentum,
            weight_decay,
            velocity: NetGrads::zeros_like(net),
        }
    }

    pub fn step(&mut self, net: &mut Net, grads: &NetGrads) {
        step_conv(&mut net.stem, &grads.stem, &mut self.velocity.stem, self.lr, self.momentum, self.weight_decay);
        for (i, block) in net.blocks.iter_mut().enumerate() {
            let (g1, g2, gs) = &grads.blocks[i];
            let (v1, v2, vs) = &mut self.velocity.blocks[i];
            step_conv(&mut block.conv1, g1, v1, self.lr, self.momentum, self.weight_decay);
            step_conv(&mut block.conv2, g2, v2, self.lr, self.momentum, self.weight_decay);
            step_conv(&mut block.shortcut, gs, vs, self.lr, self.momentum, self.weight_decay);
        }
    }
}

fn step_conv(conv: &mut Conv2d, grad: &ConvGrad, vel: &mut ConvGrad, lr: f64, momentum: f64, wd: f64) {
    for ((w, g), v) in conv
        .weight
        .iter_mut()
        .zip(grad.d_weight.iter())
        .zip(vel.d_weight.iter_mut())
    {
        *v = momentum * *v + g + wd * *w;
        *w -= lr * *v;
    }
    for ((b, g), v) in conv
        .bias
        .iter_mut()
        .zip(grad.d_bias.iter())
        .zip(vel.d_bias.iter_mut())
    {
        *v = momentum * *v + g + wd * *b;
        *b -= lr * *v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny_net() -> Net {
        Net::new(ArchDescriptor::for_feature_dim(3, 8).unwrap(), 1)
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let net = tiny_net();
        let img = Array3::from_shape_fn((3, 16, 16), |(c, y, x)| {
            ((c + 1) * (y + 2) * (x + 3) % 17) as f64 / 17.0
        });
        let (f1, _) = net.forward(&img);
        let f2 = net.forward_features(&img);
        assert_eq!(f1.len(), 8);
        assert_eq!(f1, f2);
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        // end-to-end gradcheck through the whole net on a scalar objective
        let mut net = tiny_net();
        let img = Array3::from_shape_fn((3, 8, 8), |(c, y, x)| {
            ((c * 31 + y * 7 + x * 3) % 13) as f64 / 13.0 - 0.4
        });
        let probe = Array1::from_shape_fn(8, |i| 0.3 + 0.1 * i as f64);
        let objective = |net: &Net| net.forward_features(&img).dot(&probe);

        let (_, tape) = net.forward(&img);
        let mut grads = NetGrads::zeros_like(&net);
        net.backward(&tape, &probe, &mut grads);

        let base_names = net.tensor_names();
        let mut flat_grads: Vec<(String, Vec<f64>)> = Vec::new();
        {
            let g = &grads;
            flat_grads.push(("stem.weight".into(), g.stem.d_weight.iter().copied().collect()));
            flat_grads.push(("stem.bias".into(), g.stem.d_bias.iter().copied().collect()));
            for (i, (g1, g2, gs)) in g.blocks.iter().enumerate() {
                flat_grads.push((format!("block{i}.conv1.weight"), g1.d_weight.iter().copied().collect()));
                flat_grads.push((format!("block{i}.conv1.bias"), g1.d_bias.iter().copied().collect()));
                flat_grads.push((format!("block{i}.conv2.weight"), g2.d_weight.iter().copied().collect()));
                flat_grads.push((format!("block{i}.conv2.bias"), g2.d_bias.iter().copied().collect()));
                flat_grads.push((format!("block{i}.shortcut.weight"), gs.d_weight.iter().copied().collect()));
                flat_grads.push((format!("block{i}.shortcut.bias"), gs.d_bias.iter().copied().collect()));
            }
        }
        assert_eq!(
            base_names,
            flat_grads.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>()
        );

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let eps = 1e-5;
        for (name, grad_vals) in &flat_grads {
            // probe a few random parameters per tensor
            for _ in 0..4 {
                let idx = rng.random_range(0..grad_vals.len());
                net.visit_params_mut(|n, vals| {
                    if n == name {
                        vals[idx] += eps;
                    }
                });
                let plus = objective(&net);
                net.visit_params_mut(|n, vals| {
                    if n == name {
                        vals[idx] -= 2.0 * eps;
                    }
                });
                let minus = objective(&net);
                net.visit_params_mut(|n, vals| {
                    if n == name {
                        vals[idx] += eps;
                    }
                });
                let numeric = (plus - minus) / (2.0 * eps);
                let analytic = grad_vals[idx];
                let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    (analytic - numeric).abs() / denom <= 1e-3,
                    "{name}[{idx}]: analytic {analytic} vs numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn sgd_reduces_a_simple_objective() {
        let mut net = tiny_net();
        let img = Array3::from_shape_fn((3, 8, 8), |(c, y, x)| ((c + y + x) % 5) as f64 / 5.0);
        let target = Array1::from_shape_fn(8, |i| if i % 2 == 0 { 1.0 } else { -1.0 });
        let loss_of = |net: &Net| {
            let f = net.forward_features(&img);
            let d = &f - &target;
            d.dot(&d)
        };
        let initial = loss_of(&net);
        let mut sgd = Sgd::new(&net, 0.01, 0.9, 0.0);
        for _ in 0..50 {
            let (f, tape) = net.forward(&img);
            let d_feat = (&f - &target) * 2.0;
            let mut grads = NetGrads::zeros_like(&net);
            net.backward(&tape, &d_feat, &mut grads);
            sgd.step(&mut net, &grads);
        }
        let trained = loss_of(&net);
        assert!(trained < initial * 0.5, "{initial} -> {trained}");
    }
}
