//! Convolutional encoder/decoder with a Gaussian latent.
//!
//! The encoder maps a masked image (and, by default, the mask as a second
//! channel) through stride-2 convolutions and dense layers to the mean and
//! log-variance of a diagonal Gaussian. The decoder maps a latent draw back
//! through dense layers to the bottleneck grid, then through upsampling
//! blocks that each concatenate the mirror-level encoder activation.

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::nn::{self, Tensor};
use crate::seeding;
use crate::sphere_data::Patch;

pub const LOG_VAR_MIN: f64 = -20.0;
pub const LOG_VAR_MAX: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub input_hw: (usize, usize),
    /// 2: masked image plus mask; 1: masked image only.
    pub in_channels: usize,
    pub encoder_widths: Vec<usize>,
    pub decoder_widths: Vec<usize>,
    /// Dense layers on each side of the latent.
    pub fc_layers: usize,
    /// Width of the hidden dense layers when `fc_layers > 1`.
    pub fc_hidden: usize,
    pub latent_dim: usize,
    pub skip_connections: bool,
    /// Zero-pad inputs up to the next multiple of `2^depth` and crop the
    /// output back, instead of rejecting indivisible sizes.
    pub pad_to_fit: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    /// Full-size configuration: 400x400 patches and 2507 latent components.
    /// 400 is not a multiple of 64, so inputs are padded to 448.
    fn default() -> Self {
        Self {
            input_hw: (400, 400),
            in_channels: 2,
            encoder_widths: vec![64, 128, 256, 512, 512, 512],
            decoder_widths: vec![512, 512, 512, 256, 128, 64],
            fc_layers: 3,
            fc_hidden: 512,
            latent_dim: 2507,
            skip_connections: true,
            pad_to_fit: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// 64x64 configuration with the full widths and a 64-component latent.
    pub fn small() -> Self {
        Self {
            input_hw: (64, 64),
            latent_dim: 64,
            pad_to_fit: false,
            ..Self::default()
        }
    }

    /// Configuration with the given encoder widths and mirrored decoder.
    pub fn with_widths(mut self, widths: &[usize]) -> Self {
        self.encoder_widths = widths.to_vec();
        self.decoder_widths = widths.iter().rev().copied().collect();
        self
    }

    pub fn depth(&self) -> usize {
        self.encoder_widths.len()
    }

    /// Spatial size the network runs at after optional padding.
    pub fn padded_hw(&self) -> (usize, usize) {
        let f = 1usize << self.depth();
        let (h, w) = self.input_hw;
        if self.pad_to_fit {
            (h.div_ceil(f) * f, w.div_ceil(f) * f)
        } else {
            (h, w)
        }
    }

    pub fn bottleneck(&self) -> (usize, usize, usize) {
        let (h, w) = self.padded_hw();
        let f = 1usize << self.depth();
        (*self.encoder_widths.last().unwrap_or(&0), h / f, w / f)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let (h, w) = self.input_hw;
        if h == 0 || w == 0 {
            return bad(format!("input size {h}x{w} must be positive"));
        }
        if !matches!(self.in_channels, 1 | 2) {
            return bad(format!("in_channels must be 1 or 2, got {}", self.in_channels));
        }
        if self.encoder_widths.is_empty() || self.encoder_widths.contains(&0) {
            return bad("encoder widths must be a non-empty list of positive integers".into());
        }
        let rev: Vec<usize> = self.encoder_widths.iter().rev().copied().collect();
        if self.decoder_widths != rev {
            return bad(format!(
                "decoder widths {:?} must mirror encoder widths {:?}",
                self.decoder_widths, self.encoder_widths
            ));
        }
        if self.fc_layers == 0 || self.fc_hidden == 0 || self.latent_dim == 0 {
            return bad("fc_layers, fc_hidden and latent_dim must be positive".into());
        }
        if self.depth() > 20 {
            return bad(format!("{} blocks is too deep", self.depth()));
        }
        let f = 1usize << self.depth();
        if !self.pad_to_fit && (h % f != 0 || w % f != 0) {
            return bad(format!(
                "input {h}x{w} is not divisible by 2^{} = {f}",
                self.depth()
            ));
        }
        Ok(())
    }
}

/// Offset and shape of one named parameter array in the flat store.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Layer {
    w: (usize, usize),
    b: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    enc_conv: Vec<Layer>,
    enc_fc: Vec<Layer>,
    dec_fc: Vec<Layer>,
    dec_conv: Vec<Layer>,
    out: Layer,
    segments: Vec<Segment>,
    total: usize,
}

impl Layout {
    fn new(cfg: &ModelConfig) -> Self {
        let mut segments = Vec::new();
        let mut total = 0;
        let mut push = |name: String, shape: Vec<usize>| -> (usize, usize) {
            let len = shape.iter().product();
            let seg = (total, len);
            segments.push(Segment {
                name,
                shape,
                offset: total,
                len,
            });
            total += len;
            seg
        };
        let layer = |push: &mut dyn FnMut(String, Vec<usize>) -> (usize, usize), name: &str, wshape: Vec<usize>| {
            let cout = wshape[0];
            Layer {
                w: push(format!("{name}.weight"), wshape),
                b: push(format!("{name}.bias"), vec![cout]),
            }
        };
        let l = cfg.depth();
        let ew = &cfg.encoder_widths;
        let dw = &cfg.decoder_widths;
        let mut enc_conv = Vec::new();
        let mut cin = cfg.in_channels;
        for (k, &c) in ew.iter().enumerate() {
            enc_conv.push(layer(&mut push, &format!("enc.conv{}", k + 1), vec![c, cin, 3, 3]));
            cin = c;
        }
        let (bc, bh, bw) = cfg.bottleneck();
        let flat = bc * bh * bw;
        let dims = |first: usize, last: usize| -> Vec<usize> {
            let mut d = vec![first];
            d.extend(std::iter::repeat_n(cfg.fc_hidden, cfg.fc_layers - 1));
            d.push(last);
            d
        };
        let ed = dims(flat, 2 * cfg.latent_dim);
        let enc_fc = (0..cfg.fc_layers)
            .map(|i| layer(&mut push, &format!("enc.fc{}", i + 1), vec![ed[i + 1], ed[i]]))
            .collect();
        let dd = dims(cfg.latent_dim, flat);
        let dec_fc = (0..cfg.fc_layers)
            .map(|i| layer(&mut push, &format!("dec.fc{}", i + 1), vec![dd[i + 1], dd[i]]))
            .collect();
        let mut dec_conv = Vec::new();
        let mut cprev = bc;
        for j in 1..=l {
            let cin = cprev + skip_channels(cfg, j);
            let cout = dw[j - 1];
            dec_conv.push(layer(&mut push, &format!("dec.conv{j}"), vec![cout, cin, 3, 3]));
            cprev = cout;
        }
        let out = layer(&mut push, "dec.out", vec![1, cprev, 1, 1]);
        Self {
            enc_conv,
            enc_fc,
            dec_fc,
            dec_conv,
            out,
            segments,
            total,
        }
    }
}

/// Channels concatenated before decoder block `j` (1-based).
fn skip_channels(cfg: &ModelConfig, j: usize) -> usize {
    let l = cfg.depth();
    match (cfg.skip_connections, j < l) {
        (false, _) => 0,
        (true, true) => cfg.encoder_widths[l - j - 1],
        (true, false) => cfg.in_channels,
    }
}

fn fan_in(seg: &Segment) -> usize {
    seg.shape[1..].iter().product()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    config: ModelConfig,
    layout: Layout,
    params: Vec<f64>,
}

/// Mean and clamped log-variance of the approximate posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDistribution {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl LatentDistribution {
    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }
}

/// `z = mu + exp(log_var / 2) * noise`.
pub fn reparameterize(dist: &LatentDistribution, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != dist.len() {
        return Err(Error::Shape(format!(
            "noise has {} components, latent has {}",
            noise.len(),
            dist.len()
        )));
    }
    Ok(dist
        .mu
        .iter()
        .zip(&dist.log_var)
        .zip(noise)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect())
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Encoder activations handed to the decoder: the network input followed
/// by the outputs of every encoder block except the deepest.
#[derive(Debug, Clone, PartialEq)]
pub struct Skips(pub Vec<Tensor>);

#[derive(Debug, Clone)]
pub struct EncoderTrace {
    pub input: Tensor,
    /// Outputs of the convolution blocks, shallowest first.
    pub blocks: Vec<Tensor>,
    /// Outputs of the hidden dense layers.
    pub hidden: Vec<Vec<f64>>,
    /// Final dense output before splitting and clamping.
    pub raw: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DecoderTrace {
    pub z: Vec<f64>,
    /// Outputs of the dense layers; the last one is the bottleneck grid.
    pub hidden: Vec<Vec<f64>>,
    /// Inputs of each decoder convolution (upsampled features plus skip).
    pub block_inputs: Vec<Tensor>,
    pub blocks: Vec<Tensor>,
    /// Sigmoid output at the padded size.
    pub output: Tensor,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub encoder: EncoderTrace,
    pub dist: LatentDistribution,
    pub noise: Vec<f64>,
    pub decoder: DecoderTrace,
}

/// Gradient of a scalar with respect to every parameter (same layout as
/// [`VaeModel::params`]) and to the latent draw.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub z: Vec<f64>,
}

impl VaeModel {
    /// He-uniform kernels (`U(-b, b)`, `b = sqrt(6 / fan_in)`) and zero
    /// biases, each segment drawn from its own seeded stream.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let chunks: Vec<Vec<f64>> = layout
            .segments
            .par_iter()
            .map(|seg| {
                if seg.name.ends_with(".bias") {
                    return vec![0.0; seg.len];
                }
                let b = (6.0 / fan_in(seg) as f64).sqrt();
                let mut rng = seeding::stream(config.seed, &seg.name, 0);
                (0..seg.len).map(|_| rng.random_range(-b..b)).collect()
            })
            .collect();
        let params = chunks.concat();
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.layout.total
    }

    pub fn segments(&self) -> &[Segment] {
        &self.layout.segments
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .segments
            .iter()
            .find(|s| s.name == name)
            .map(|s| &self.params[s.offset..s.offset + s.len])
    }

    fn w(&self, l: &Layer) -> &[f64] {
        &self.params[l.w.0..l.w.0 + l.w.1]
    }

    fn b(&self, l: &Layer) -> &[f64] {
        &self.params[l.b.0..l.b.0 + l.b.1]
    }

    /// Pin the posterior variance to its minimum: the log-variance head
    /// outputs exactly `LOG_VAR_MIN` for every input.
    pub fn collapse_posterior(&mut self) {
        let last = *self.layout.enc_fc.last().expect("at least one dense layer");
        let d = self.config.latent_dim;
        let n_in = last.w.1 / (2 * d);
        self.params[last.w.0 + d * n_in..last.w.0 + last.w.1].fill(0.0);
        self.params[last.b.0 + d..last.b.0 + last.b.1].fill(LOG_VAR_MIN);
    }

    fn check_hw(&self, what: &str, a: &Array2<f64>) -> Result<()> {
        if a.dim() != self.config.input_hw {
            return Err(Error::Shape(format!(
                "{what} is {:?}, model expects {:?}",
                a.dim(),
                self.config.input_hw
            )));
        }
        Ok(())
    }

    /// Network input: hole pixels of the image are set to zero, padding
    /// (if any) is marked as hole.
    fn input_tensor(&self, image: &Array2<f64>, mask: &Array2<f64>) -> Result<Tensor> {
        self.check_hw("image", image)?;
        self.check_hw("mask", mask)?;
        let (h, w) = self.config.input_hw;
        let (ph, pw) = self.config.padded_hw();
        let mut x = Tensor::zeros(self.config.in_channels, ph, pw);
        let n = ph * pw;
        for y in 0..ph {
            for xx in 0..pw {
                let i = y * pw + xx;
                let (v, m) = if y < h && xx < w {
                    let m = mask[(y, xx)];
                    (if m != 0.0 { 0.0 } else { image[(y, xx)] }, m)
                } else {
                    (0.0, 1.0)
                };
                x.data[i] = v;
                if self.config.in_channels == 2 {
                    x.data[n + i] = m;
                }
            }
        }
        Ok(x)
    }

    pub fn encode_trace(&self, image: &Array2<f64>, mask: &Array2<f64>) -> Result<EncoderTrace> {
        let input = self.input_tensor(image, mask)?;
        let mut blocks: Vec<Tensor> = Vec::with_capacity(self.config.depth());
        for layer in &self.layout.enc_conv {
            let prev = blocks.last().unwrap_or(&input);
            let mut t = nn::conv2d(prev, self.w(layer), self.b(layer), 3, 2, 1);
            nn::leaky_relu(&mut t);
            blocks.push(t);
        }
        let mut v = blocks.last().expect("non-empty encoder").data.clone();
        let mut hidden = Vec::new();
        let n = self.layout.enc_fc.len();
        for (i, layer) in self.layout.enc_fc.iter().enumerate() {
            v = nn::dense(&v, self.w(layer), self.b(layer));
            if i + 1 < n {
                for x in &mut v {
                    if *x < 0.0 {
                        *x *= nn::LEAKY_SLOPE;
                    }
                }
                hidden.push(v.clone());
            }
        }
        Ok(EncoderTrace {
            input,
            blocks,
            hidden,
            raw: v,
        })
    }

    fn dist_of(&self, raw: &[f64]) -> LatentDistribution {
        let d = self.config.latent_dim;
        LatentDistribution {
            mu: raw[..d].to_vec(),
            log_var: raw[d..].iter().map(|v| v.clamp(LOG_VAR_MIN, LOG_VAR_MAX)).collect(),
        }
    }

    fn skips_of(&self, trace: &EncoderTrace) -> Skips {
        let l = self.config.depth();
        let mut s = vec![trace.input.clone()];
        s.extend(trace.blocks[..l - 1].iter().cloned());
        Skips(s)
    }

    pub fn encode(&self, image: &Array2<f64>, mask: &Array2<f64>) -> Result<(LatentDistribution, Skips)> {
        let t = self.encode_trace(image, mask)?;
        Ok((self.dist_of(&t.raw), self.skips_of(&t)))
    }

    pub fn decode_trace(&self, z: &[f64], skips: &Skips) -> Result<DecoderTrace> {
        let cfg = &self.config;
        if z.len() != cfg.latent_dim {
            return Err(Error::Shape(format!("z has {} components, latent has {}", z.len(), cfg.latent_dim)));
        }
        let l = cfg.depth();
        let (ph, pw) = cfg.padded_hw();
        if skips.0.len() != l {
            return Err(Error::Shape(format!("{} skip tensors, expected {l}", skips.0.len())));
        }
        for (k, s) in skips.0.iter().enumerate() {
            let c = if k == 0 { cfg.in_channels } else { cfg.encoder_widths[k - 1] };
            if s.shape() != (c, ph >> k, pw >> k) {
                return Err(Error::Shape(format!(
                    "skip {k} is {:?}, expected {:?}",
                    s.shape(),
                    (c, ph >> k, pw >> k)
                )));
            }
        }
        let mut v = z.to_vec();
        let mut hidden = Vec::new();
        for layer in &self.layout.dec_fc {
            v = nn::dense(&v, self.w(layer), self.b(layer));
            for x in &mut v {
                if *x < 0.0 {
                    *x = 0.0;
                }
            }
            hidden.push(v.clone());
        }
        let (bc, bh, bw) = cfg.bottleneck();
        let mut d = Tensor::from_vec(bc, bh, bw, v)?;
        let mut block_inputs = Vec::with_capacity(l);
        let mut blocks = Vec::with_capacity(l);
        for (j, layer) in (1..=l).zip(&self.layout.dec_conv) {
            let up = nn::upsample2(&d);
            let inp = if cfg.skip_connections {
                Tensor::concat(&[&up, &skips.0[l - j]])
            } else {
                up
            };
            let mut t = nn::conv2d(&inp, self.w(layer), self.b(layer), 3, 1, 1);
            nn::relu(&mut t);
            block_inputs.push(inp);
            blocks.push(t.clone());
            d = t;
        }
        let o = &self.layout.out;
        let output = nn::conv2d(&d, self.w(o), self.b(o), 1, 1, 0).map(nn::sigmoid);
        Ok(DecoderTrace {
            z: z.to_vec(),
            hidden,
            block_inputs,
            blocks,
            output,
        })
    }

    fn crop(&self, t: &Tensor) -> Array2<f64> {
        let (h, w) = self.config.input_hw;
        Array2::from_shape_fn((h, w), |(y, x)| t.data[y * t.w + x])
    }

    pub fn decode(&self, z: &[f64], skips: &Skips) -> Result<Array2<f64>> {
        Ok(self.crop(&self.decode_trace(z, skips)?.output))
    }

    pub fn forward_trace(&self, image: &Array2<f64>, mask: &Array2<f64>, noise: &[f64]) -> Result<ForwardTrace> {
        let encoder = self.encode_trace(image, mask)?;
        let dist = self.dist_of(&encoder.raw);
        let z = reparameterize(&dist, noise)?;
        let decoder = self.decode_trace(&z, &self.skips_of(&encoder))?;
        Ok(ForwardTrace {
            encoder,
            dist,
            noise: noise.to_vec(),
            decoder,
        })
    }

    pub fn output_of(&self, trace: &ForwardTrace) -> Array2<f64> {
        self.crop(&trace.decoder.output)
    }

    pub fn forward_arrays(
        &self,
        image: &Array2<f64>,
        mask: &Array2<f64>,
        noise: &[f64],
    ) -> Result<(Array2<f64>, LatentDistribution)> {
        let t = self.forward_trace(image, mask, noise)?;
        Ok((self.output_of(&t), t.dist))
    }

    pub fn forward(&self, patch: &Patch, noise: &[f64]) -> Result<(Array2<f64>, LatentDistribution)> {
        self.forward_arrays(&patch.image, &patch.mask, noise)
    }

    /// Reverse pass through the decoder only. Returns parameter gradients
    /// (decoder segments filled), the gradient with respect to `z` and the
    /// gradient with respect to each skip tensor.
    pub fn decoder_backward(&self, trace: &DecoderTrace, grad_output: &Array2<f64>) -> (Vec<f64>, Vec<f64>, Vec<Tensor>) {
        let cfg = &self.config;
        let l = cfg.depth();
        let mut grads = vec![0.0; self.layout.total];
        let out = &trace.output;
        let mut g = Tensor::zeros(1, out.h, out.w);
        for ((y, x), v) in grad_output.indexed_iter() {
            let i = y * out.w + x;
            let s = out.data[i];
            g.data[i] = v * s * (1.0 - s);
        }
        let last = trace.blocks.last().expect("non-empty decoder");
        let o = &self.layout.out;
        let cg = nn::conv2d_backward(last, self.w(o), &g, 1, 1, 0, true, true);
        put(&mut grads, o, &cg.weight, &cg.bias);
        let mut gd = cg.input.expect("input gradient requested");
        let mut skip_grads: Vec<Tensor> = vec![Tensor::zeros(0, 0, 0); l];
        for j in (1..=l).rev() {
            let layer = &self.layout.dec_conv[j - 1];
            nn::relu_backward(&trace.blocks[j - 1].data, &mut gd.data);
            let cg = nn::conv2d_backward(&trace.block_inputs[j - 1], self.w(layer), &gd, 3, 1, 1, true, true);
            put(&mut grads, layer, &cg.weight, &cg.bias);
            let gi = cg.input.expect("input gradient requested");
            let up_c = if j == 1 { cfg.bottleneck().0 } else { cfg.decoder_widths[j - 2] };
            let gup = if cfg.skip_connections {
                let mut parts = gi.split(&[up_c, gi.c - up_c]).into_iter();
                let gup = parts.next().expect("two parts");
                skip_grads[l - j] = parts.next().expect("two parts");
                gup
            } else {
                gi
            };
            gd = nn::upsample2_backward(&gup);
        }
        let mut gv = gd.data;
        for i in (0..self.layout.dec_fc.len()).rev() {
            let layer = &self.layout.dec_fc[i];
            nn::relu_backward(&trace.hidden[i], &mut gv);
            let x = if i == 0 { &trace.z } else { &trace.hidden[i - 1] };
            let (gx, gw, gb) = nn::dense_backward(x, self.w(layer), &gv, true);
            put(&mut grads, layer, &gw, &gb);
            gv = gx;
        }
        (grads, gv, skip_grads)
    }

    /// Reverse pass of the full forward computation for the scalar whose
    /// gradients with respect to the output image, `mu` and `log_var` are
    /// given.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        grad_output: &Array2<f64>,
        grad_mu: &[f64],
        grad_log_var: &[f64],
    ) -> Gradients {
        let cfg = &self.config;
        let l = cfg.depth();
        let d = cfg.latent_dim;
        let (mut grads, gz, skip_grads) = self.decoder_backward(&trace.decoder, grad_output);
        let enc = &trace.encoder;
        let mut graw = vec![0.0; 2 * d];
        for k in 0..d {
            let lv = trace.dist.log_var[k];
            graw[k] = gz[k] + grad_mu[k];
            let raw = enc.raw[d + k];
            if (LOG_VAR_MIN..=LOG_VAR_MAX).contains(&raw) {
                graw[d + k] = gz[k] * trace.noise[k] * 0.5 * (0.5 * lv).exp() + grad_log_var[k];
            }
        }
        let mut gv = graw;
        for i in (0..self.layout.enc_fc.len()).rev() {
            let layer = &self.layout.enc_fc[i];
            if i + 1 < self.layout.enc_fc.len() {
                nn::leaky_relu_backward(&enc.hidden[i], &mut gv);
            }
            let x = if i == 0 { &enc.blocks[l - 1].data } else { &enc.hidden[i - 1] };
            let (gx, gw, gb) = nn::dense_backward(x, self.w(layer), &gv, true);
            put(&mut grads, layer, &gw, &gb);
            gv = gx;
        }
        let (bc, bh, bw) = cfg.bottleneck();
        let mut ge = Tensor { c: bc, h: bh, w: bw, data: gv };
        for k in (1..=l).rev() {
            if cfg.skip_connections && k < l {
                for (a, b) in ge.data.iter_mut().zip(&skip_grads[k].data) {
                    *a += b;
                }
            }
            nn::leaky_relu_backward(&enc.blocks[k - 1].data, &mut ge.data);
            let layer = &self.layout.enc_conv[k - 1];
            let input = if k == 1 { &enc.input } else { &enc.blocks[k - 2] };
            let cg = nn::conv2d_backward(input, self.w(layer), &ge, 3, 2, 1, true, k > 1);
            put(&mut grads, layer, &cg.weight, &cg.bias);
            if let Some(gi) = cg.input {
                ge = gi;
            }
        }
        Gradients { params: grads, z: gz }
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::default();
        for seg in &self.layout.segments {
            c.insert(
                seg.name.clone(),
                seg.shape.clone(),
                self.params[seg.offset..seg.offset + seg.len].to_vec(),
            );
        }
        c.metadata
            .insert("model_config".into(), serde_json::to_string(&self.config)?);
        Ok(c)
    }

    /// Rebuild a model from a container, checking every segment's shape
    /// against the layout implied by the stored configuration.
    pub fn from_container(c: &Container) -> Result<Self> {
        let config: ModelConfig = serde_json::from_str(c.meta("model_config")?)?;
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.total];
        for seg in &layout.segments {
            let a = c.get(&seg.name)?;
            if a.shape != seg.shape {
                return Err(Error::Checkpoint(format!(
                    "segment `{}` has shape {:?}, configuration implies {:?}",
                    seg.name, a.shape, seg.shape
                )));
            }
            params[seg.offset..seg.offset + seg.len].copy_from_slice(&a.data);
        }
        if let Some(i) = params.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                index: i,
                value: params[i],
            });
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

fn put(grads: &mut [f64], layer: &Layer, w: &[f64], b: &[f64]) {
    grads[layer.w.0..layer.w.0 + layer.w.1].copy_from_slice(w);
    grads[layer.b.0..layer.b.0 + layer.b.1].copy_from_slice(b);
}
