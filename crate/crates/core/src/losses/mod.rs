//! Reconstruction, KL, perceptual and total-variation losses, their
//! weighted sum, and the gradient of each.

mod extractor;

pub use extractor::{ExtractorMode, ExtractorTrace, FeatureExtractor, FeatureExtractorSpec, IMAGENET_MEAN, IMAGENET_STD};

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::vae::LatentDistribution;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub rec: f64,
    pub kl: f64,
    pub perceptual: f64,
    pub tv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rec: 6.0,
            kl: 0.05,
            perceptual: 0.05,
            tv: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.rec, self.kl, self.perceptual, self.tv];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || w.iter().all(|v| *v == 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be non-negative with at least one positive, got {w:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PerceptualReduction {
    /// Mean absolute difference per stage.
    #[default]
    Mean,
    /// Summed absolute difference per stage.
    Sum,
}

/// Choices that change how terms are computed, not how they are weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct LossOptions {
    pub dilation: Connectivity,
    pub perceptual: PerceptualReduction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub rec: f64,
    pub kl: f64,
    pub perceptual: f64,
    pub tv: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(rec: f64, kl: f64, perceptual: f64, tv: f64, w: &LossWeights) -> Result<Self> {
        for (name, v) in [("rec", rec), ("kl", kl), ("perceptual", perceptual), ("tv", tv)] {
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss(name));
            }
        }
        let total = w.rec * rec + w.kl * kl + w.perceptual * perceptual + w.tv * tv;
        if !total.is_finite() {
            return Err(Error::NonFiniteLoss("total"));
        }
        Ok(Self {
            rec,
            kl,
            perceptual,
            tv,
            total,
        })
    }
}

fn same_shape(what: &str, a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `(1/N) ||(1-M)(y_hat - y)||_1 + (1/N) ||M (y_hat - y)||_1`. The two
/// regions partition the image, so this is the mean absolute error and is
/// computed as one sum.
pub fn rec_loss(y_hat: &Array2<f64>, y: &Array2<f64>, mask: &Array2<f64>) -> Result<f64> {
    same_shape("rec_loss", y_hat, y)?;
    same_shape("rec_loss mask", y_hat, mask)?;
    crate::sphere_data::check_binary(mask)?;
    let n = y.len() as f64;
    Ok(Zip::from(y_hat).and(y).fold(0.0, |s, a, b| s + (a - b).abs()) / n)
}

pub fn rec_loss_grad(y_hat: &Array2<f64>, y: &Array2<f64>) -> Array2<f64> {
    let n = y.len() as f64;
    Zip::from(y_hat).and(y).map_collect(|a, b| sign(a - b) / n)
}

fn check_prior(dist: &LatentDistribution, prior_var: &[f64]) -> Result<()> {
    if dist.mu.len() != prior_var.len() || dist.log_var.len() != prior_var.len() {
        return Err(Error::Shape(format!(
            "latent of length {} against {} prior variances",
            dist.mu.len(),
            prior_var.len()
        )));
    }
    if let Some((k, v)) = prior_var.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidSpectrum(format!("prior variance {v} at component {k}")));
    }
    Ok(())
}

/// `KL(N(mu, sigma^2) || N(0, c^2))` summed over components:
/// `1/2 sum [log c^2 - log sigma^2 - 1 + (sigma^2 + mu^2) / c^2]`.
pub fn kl_loss(dist: &LatentDistribution, prior_var: &[f64]) -> Result<f64> {
    check_prior(dist, prior_var)?;
    Ok(0.5
        * dist
            .mu
            .iter()
            .zip(&dist.log_var)
            .zip(prior_var)
            .map(|((m, lv), c2)| c2.ln() - lv - 1.0 + (lv.exp() + m * m) / c2)
            .sum::<f64>())
}

/// Gradients of [`kl_loss`] with respect to `mu` and `log_var`.
pub fn kl_loss_grad(dist: &LatentDistribution, prior_var: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let gmu = dist.mu.iter().zip(prior_var).map(|(m, c2)| m / c2).collect();
    let glv = dist
        .log_var
        .iter()
        .zip(prior_var)
        .map(|(lv, c2)| 0.5 * (lv.exp() / c2 - 1.0))
        .collect();
    (gmu, glv)
}

/// Pixels within one step of a hole pixel (including the hole itself).
pub fn dilate_mask(mask: &Array2<f64>, connectivity: Connectivity) -> Array2<bool> {
    let (h, w) = mask.dim();
    let mut p = Array2::from_elem((h, w), false);
    for ((y, x), &m) in mask.indexed_iter() {
        if m == 0.0 {
            continue;
        }
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                if connectivity == Connectivity::Four && dy != 0 && dx != 0 {
                    continue;
                }
                let (yy, xx) = (y as isize + dy, x as isize + dx);
                if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                    p[(yy as usize, xx as usize)] = true;
                }
            }
        }
    }
    p
}

fn check_tv(y_hat: &Array2<f64>, region: &Array2<bool>, n_hole: usize) -> Result<bool> {
    if y_hat.dim() != region.dim() {
        return Err(Error::Shape(format!("tv_loss: {:?} vs {:?}", y_hat.dim(), region.dim())));
    }
    let any = region.iter().any(|&b| b);
    if any && n_hole == 0 {
        return Err(Error::Config("tv_loss with a non-empty region needs n_hole >= 1".into()));
    }
    Ok(any)
}

/// Absolute horizontal and vertical neighbour differences with both ends
/// inside `region`, divided by `n_hole`.
pub fn tv_loss(y_hat: &Array2<f64>, region: &Array2<bool>, n_hole: usize) -> Result<f64> {
    if !check_tv(y_hat, region, n_hole)? {
        return Ok(0.0);
    }
    let (h, w) = y_hat.dim();
    let mut s = 0.0;
    for y in 0..h {
        for x in 0..w {
            if !region[(y, x)] {
                continue;
            }
            if x + 1 < w && region[(y, x + 1)] {
                s += (y_hat[(y, x + 1)] - y_hat[(y, x)]).abs();
            }
            if y + 1 < h && region[(y + 1, x)] {
                s += (y_hat[(y + 1, x)] - y_hat[(y, x)]).abs();
            }
        }
    }
    Ok(s / n_hole as f64)
}

pub fn tv_loss_grad(y_hat: &Array2<f64>, region: &Array2<bool>, n_hole: usize) -> Result<Array2<f64>> {
    let mut g = Array2::zeros(y_hat.dim());
    if !check_tv(y_hat, region, n_hole)? {
        return Ok(g);
    }
    let (h, w) = y_hat.dim();
    let inv = 1.0 / n_hole as f64;
    for y in 0..h {
        for x in 0..w {
            if !region[(y, x)] {
                continue;
            }
            if x + 1 < w && region[(y, x + 1)] {
                let s = sign(y_hat[(y, x + 1)] - y_hat[(y, x)]) * inv;
                g[(y, x + 1)] += s;
                g[(y, x)] -= s;
            }
            if y + 1 < h && region[(y + 1, x)] {
                let s = sign(y_hat[(y + 1, x)] - y_hat[(y, x)]) * inv;
                g[(y + 1, x)] += s;
                g[(y, x)] -= s;
            }
        }
    }
    Ok(g)
}

fn stage_scale(t: &Tensor, reduction: PerceptualReduction) -> f64 {
    match reduction {
        PerceptualReduction::Mean => 1.0 / t.len() as f64,
        PerceptualReduction::Sum => 1.0,
    }
}

fn perceptual_parts(
    fa: &[Tensor],
    fb: &[Tensor],
    reduction: PerceptualReduction,
) -> f64 {
    fa.iter()
        .zip(fb)
        .map(|(a, b)| {
            let s: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum();
            s * stage_scale(a, reduction)
        })
        .sum()
}

/// Sum over extractor stages of the L1 distance between the features of
/// `y_hat` and `y`.
pub fn perceptual_loss(
    y_hat: &Array2<f64>,
    y: &Array2<f64>,
    extractor: &FeatureExtractor,
    reduction: PerceptualReduction,
) -> Result<f64> {
    same_shape("perceptual_loss", y_hat, y)?;
    Ok(perceptual_parts(&extractor.features(y_hat), &extractor.features(y), reduction))
}

/// Perceptual loss and its gradient with respect to `y_hat`. `target`
/// holds the precomputed features of `y`.
pub fn perceptual_loss_grad(
    y_hat: &Array2<f64>,
    target: &[Tensor],
    extractor: &FeatureExtractor,
    reduction: PerceptualReduction,
) -> (f64, Array2<f64>) {
    let trace = extractor.trace(y_hat);
    let feats = extractor.features_of(&trace);
    let value = perceptual_parts(&feats, target, reduction);
    let grads: Vec<Tensor> = feats
        .iter()
        .zip(target)
        .map(|(a, b)| {
            let s = stage_scale(a, reduction);
            Tensor {
                data: a.data.iter().zip(&b.data).map(|(x, y)| sign(x - y) * s).collect(),
                ..*a
            }
        })
        .collect();
    (value, extractor.backward(&trace, &grads))
}

/// Everything the composite loss needs besides the prediction.
pub struct LossContext<'a> {
    pub extractor: &'a FeatureExtractor,
    pub prior_var: &'a [f64],
    pub weights: LossWeights,
    pub options: LossOptions,
}

pub fn composite_loss(
    y_hat: &Array2<f64>,
    y: &Array2<f64>,
    mask: &Array2<f64>,
    dist: &LatentDistribution,
    ctx: &LossContext<'_>,
) -> Result<LossReport> {
    let rec = rec_loss(y_hat, y, mask)?;
    let kl = kl_loss(dist, ctx.prior_var)?;
    let perceptual = perceptual_loss(y_hat, y, ctx.extractor, ctx.options.perceptual)?;
    let region = dilate_mask(mask, ctx.options.dilation);
    let n_hole = mask.iter().filter(|&&m| m == 1.0).count();
    let tv = tv_loss(y_hat, &region, n_hole)?;
    LossReport::new(rec, kl, perceptual, tv, &ctx.weights)
}

/// Gradient of the weighted total with respect to the prediction and the
/// posterior parameters.
pub struct CompositeGrad {
    pub report: LossReport,
    pub y_hat: Array2<f64>,
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

pub fn composite_loss_grad(
    y_hat: &Array2<f64>,
    y: &Array2<f64>,
    mask: &Array2<f64>,
    dist: &LatentDistribution,
    ctx: &LossContext<'_>,
) -> Result<CompositeGrad> {
    let w = ctx.weights;
    let rec = rec_loss(y_hat, y, mask)?;
    let kl = kl_loss(dist, ctx.prior_var)?;
    let target = ctx.extractor.features(y);
    same_shape("perceptual_loss", y_hat, y)?;
    let (perceptual, gp) = perceptual_loss_grad(y_hat, &target, ctx.extractor, ctx.options.perceptual);
    let region = dilate_mask(mask, ctx.options.dilation);
    let n_hole = mask.iter().filter(|&&m| m == 1.0).count();
    let tv = tv_loss(y_hat, &region, n_hole)?;
    let report = LossReport::new(rec, kl, perceptual, tv, &w)?;
    let gr = rec_loss_grad(y_hat, y);
    let gt = tv_loss_grad(y_hat, &region, n_hole)?;
    let g = Zip::from(&gr)
        .and(&gp)
        .and(&gt)
        .map_collect(|a, b, c| w.rec * a + w.perceptual * b + w.tv * c);
    let (gmu, glv) = kl_loss_grad(dist, ctx.prior_var);
    Ok(CompositeGrad {
        report,
        y_hat: g,
        mu: gmu.into_iter().map(|v| w.kl * v).collect(),
        log_var: glv.into_iter().map(|v| w.kl * v).collect(),
    })
}
