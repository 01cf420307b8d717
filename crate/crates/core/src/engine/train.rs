use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::metrics::{append_rows, pooled_metrics, ImageMetrics, MetricsRow};
use crate::container::Container;
use crate::error::{Error, Result};
use crate::grf::{prior_variances, PowerSpectrum};
use crate::losses::{composite_loss_grad, FeatureExtractor, LossContext, LossOptions, LossReport, LossWeights};
use crate::seeding;
use crate::sphere_data::Patch;
use crate::vae::{standard_normal, VaeModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_epochs: u64,
    /// Stop after this many optimizer steps even if epochs remain.
    pub max_steps: Option<u64>,
    pub seed: u64,
    pub weights: LossWeights,
    pub loss_options: LossOptions,
    /// Write a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: u64,
    /// Share of the training patches held out for validation metrics.
    pub validation_fraction: f64,
    /// Data peak used for PSNR.
    pub peak: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self {
            learning_rate: a.learning_rate,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            batch_size: 4,
            max_epochs: 1000,
            max_steps: None,
            seed: 0,
            weights: LossWeights::default(),
            loss_options: LossOptions::default(),
            checkpoint_every: 0,
            validation_fraction: 0.1,
            peak: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be non-negative, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("betas must lie in [0, 1), got {} and {}", self.beta1, self.beta2));
        }
        if !(self.eps >= 0.0) {
            return bad(format!("eps must be non-negative, got {}", self.eps));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!("validation_fraction must lie in [0, 1), got {}", self.validation_fraction));
        }
        if !(self.peak > 0.0) {
            return bad(format!("peak must be positive, got {}", self.peak));
        }
        self.weights.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

pub fn check_mask_pool(pool: &[Array2<f64>]) -> Result<()> {
    if pool.is_empty() {
        return Err(Error::EmptyMaskPool);
    }
    for (i, m) in pool.iter().enumerate() {
        crate::sphere_data::check_binary(m)?;
        if !m.iter().any(|&v| v == 1.0) {
            return Err(Error::MaskWithoutHoles(i));
        }
    }
    Ok(())
}

/// The `(patch index, mask index)` sequence for one epoch: patches in a
/// seeded random order, each paired with a uniformly drawn pool mask.
pub fn pair_masks(n_patches: usize, pool: &[Array2<f64>], seed: u64, epoch: u64) -> Result<Vec<(usize, usize)>> {
    check_mask_pool(pool)?;
    let mut order: Vec<usize> = (0..n_patches).collect();
    order.shuffle(&mut seeding::stream(seed, "epoch-order", epoch));
    let mut rng = seeding::stream(seed, "mask-pairing", epoch);
    Ok(order.into_iter().map(|p| (p, rng.random_range(0..pool.len()))).collect())
}

/// Deterministic split of patch indices into training and validation sets,
/// with a fixed mask for every validation patch.
pub fn split_validation(n: usize, fraction: f64, pool_len: usize, seed: u64) -> (Vec<usize>, Vec<(usize, usize)>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeding::stream(seed, "validation-split", 0));
    let n_val = ((n as f64) * fraction).floor() as usize;
    let n_val = n_val.min(n.saturating_sub(1));
    let mut rng = seeding::stream(seed, "validation-masks", 0);
    let mut val: Vec<(usize, usize)> = idx[..n_val].iter().map(|&p| (p, rng.random_range(0..pool_len))).collect();
    val.sort_unstable();
    let mut train = idx[n_val..].to_vec();
    train.sort_unstable();
    (train, val)
}

/// One training example: clean image, mask and latent noise.
pub struct Sample<'a> {
    pub image: &'a Array2<f64>,
    pub mask: &'a Array2<f64>,
    pub noise: Vec<f64>,
}

/// Mean loss report and mean parameter gradient over a batch. Samples are
/// evaluated in parallel and reduced in order.
pub fn batch_gradient(model: &VaeModel, samples: &[Sample<'_>], ctx: &LossContext<'_>) -> Result<(LossReport, Vec<f64>)> {
    let parts: Vec<Result<(LossReport, Vec<f64>)>> = samples
        .par_iter()
        .map(|s| {
            let trace = model.forward_trace(s.image, s.mask, &s.noise)?;
            let out = model.output_of(&trace);
            let g = composite_loss_grad(&out, s.image, s.mask, &trace.dist, ctx)?;
            let grads = model.backward(&trace, &g.y_hat, &g.mu, &g.log_var);
            Ok((g.report, grads.params))
        })
        .collect();
    let n = samples.len() as f64;
    let mut sum = vec![0.0; model.n_params()];
    let mut acc = [0.0; 4];
    for p in parts {
        let (r, g) = p?;
        for (a, b) in sum.iter_mut().zip(&g) {
            *a += b;
        }
        acc[0] += r.rec;
        acc[1] += r.kl;
        acc[2] += r.perceptual;
        acc[3] += r.tv;
    }
    for v in &mut sum {
        *v /= n;
    }
    let report = LossReport::new(acc[0] / n, acc[1] / n, acc[2] / n, acc[3] / n, &ctx.weights)?;
    Ok((report, sum))
}

/// Composite loss of a model on fixed examples (no parameter update).
pub fn evaluate_loss(model: &VaeModel, samples: &[Sample<'_>], ctx: &LossContext<'_>) -> Result<LossReport> {
    let parts: Vec<Result<LossReport>> = samples
        .par_iter()
        .map(|s| {
            let (out, dist) = model.forward_arrays(s.image, s.mask, &s.noise)?;
            crate::losses::composite_loss(&out, s.image, s.mask, &dist, ctx)
        })
        .collect();
    let mut acc = [0.0; 4];
    for p in parts {
        let r = p?;
        acc[0] += r.rec;
        acc[1] += r.kl;
        acc[2] += r.perceptual;
        acc[3] += r.tv;
    }
    let n = samples.len() as f64;
    LossReport::new(acc[0] / n, acc[1] / n, acc[2] / n, acc[3] / n, &ctx.weights)
}

/// Optimizer-step-level training state. Every random draw of step `s` is
/// derived from `(seed, s)` or `(seed, epoch)`, so a run resumed from a
/// checkpoint continues exactly as an uninterrupted run would.
pub struct Trainer<'a> {
    pub model: VaeModel,
    pub adam: AdamState,
    pub step: u64,
    config: TrainConfig,
    patches: &'a [Patch],
    pool: &'a [Array2<f64>],
    extractor: &'a FeatureExtractor,
    prior_var: Vec<f64>,
    train_idx: Vec<usize>,
    val: Vec<(usize, usize)>,
    pairing: Option<(u64, Vec<(usize, usize)>)>,
    /// Running sums of the loss terms over the current epoch and the
    /// number of steps they cover.
    epoch_acc: [f64; 5],
    rows: Vec<MetricsRow>,
    out_dir: Option<PathBuf>,
    checkpoints: Vec<PathBuf>,
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const FINAL_CHECKPOINT: &str = "model.safetensors";

impl<'a> Trainer<'a> {
    pub fn new(
        model: VaeModel,
        patches: &'a [Patch],
        pool: &'a [Array2<f64>],
        extractor: &'a FeatureExtractor,
        spectrum: &PowerSpectrum,
        config: TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        check_mask_pool(pool)?;
        let hw = model.config().input_hw;
        for p in patches {
            if p.image.dim() != hw {
                return Err(Error::Shape(format!(
                    "patch {} is {:?}, model expects {hw:?}",
                    p.spec.patch_id,
                    p.image.dim()
                )));
            }
            if p.has_holes() {
                return Err(Error::Config(format!(
                    "training patch {} has masked pixels; train on clean patches",
                    p.spec.patch_id
                )));
            }
        }
        if let Some(m) = pool.iter().find(|m| m.dim() != hw) {
            return Err(Error::Shape(format!("pool mask is {:?}, model expects {hw:?}", m.dim())));
        }
        if patches.is_empty() {
            return Err(Error::Config("no training patches".into()));
        }
        let prior_var = prior_variances(spectrum, model.config().latent_dim)?;
        let (train_idx, val) = split_validation(patches.len(), config.validation_fraction, pool.len(), config.seed);
        let n = model.n_params();
        Ok(Self {
            model,
            adam: AdamState::new(n),
            step: 0,
            config,
            patches,
            pool,
            extractor,
            prior_var,
            train_idx,
            val,
            pairing: None,
            epoch_acc: [0.0; 5],
            rows: Vec::new(),
            out_dir: None,
            checkpoints: Vec::new(),
        })
    }

    /// Write metrics and checkpoints under `dir`.
    pub fn with_output(mut self, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        self.out_dir = Some(dir);
        Ok(self)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn rows(&self) -> &[MetricsRow] {
        &self.rows
    }

    pub fn checkpoints(&self) -> &[PathBuf] {
        &self.checkpoints
    }

    pub fn prior_var(&self) -> &[f64] {
        &self.prior_var
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.train_idx.len().div_ceil(self.config.batch_size) as u64
    }

    pub fn total_steps(&self) -> u64 {
        let by_epochs = self.config.max_epochs * self.steps_per_epoch();
        self.config.max_steps.map_or(by_epochs, |s| s.min(by_epochs))
    }

    fn ctx(&self) -> LossContext<'_> {
        LossContext {
            extractor: self.extractor,
            prior_var: &self.prior_var,
            weights: self.config.weights,
            options: self.config.loss_options,
        }
    }

    /// The examples of step `step`: patch, mask and noise.
    fn batch(&mut self, step: u64) -> Result<Vec<(usize, usize, Vec<f64>)>> {
        let spe = self.steps_per_epoch();
        let epoch = step / spe;
        let pos = (step % spe) as usize;
        if self.pairing.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let p = pair_masks(self.train_idx.len(), self.pool, self.config.seed, epoch)?;
            self.pairing = Some((epoch, p));
        }
        let pairs = &self.pairing.as_ref().expect("set above").1;
        let bs = self.config.batch_size;
        let chunk = &pairs[pos * bs..((pos + 1) * bs).min(pairs.len())];
        let mut rng = seeding::stream(self.config.seed, "latent-noise", step);
        let d = self.model.config().latent_dim;
        Ok(chunk
            .iter()
            .map(|&(p, m)| (self.train_idx[p], m, standard_normal(&mut rng, d)))
            .collect())
    }

    /// One optimizer step. Returns the batch-mean loss report.
    pub fn step_once(&mut self) -> Result<LossReport> {
        let batch = self.batch(self.step)?;
        let samples: Vec<Sample<'_>> = batch
            .into_iter()
            .map(|(p, m, noise)| Sample {
                image: &self.patches[p].image,
                mask: &self.pool[m],
                noise,
            })
            .collect();
        let (report, grads) = batch_gradient(&self.model, &samples, &self.ctx())?;
        let adam = self.config.adam();
        let segments = self.model.segments().to_vec();
        adam_step(self.model.params_mut(), &grads, &mut self.adam, &adam, &segments)?;
        self.step += 1;
        for (a, v) in self.epoch_acc.iter_mut().zip([report.rec, report.kl, report.perceptual, report.tv, 1.0]) {
            *a += v;
        }
        if self.step % self.steps_per_epoch() == 0 {
            self.log_epoch()?;
        }
        if self.config.checkpoint_every > 0 && self.step % self.config.checkpoint_every == 0 {
            if let Some(dir) = &self.out_dir {
                let path = dir.join("checkpoints").join(format!("step_{:06}.safetensors", self.step));
                self.save_checkpoint(&path)?;
                self.checkpoints.push(path);
            }
        }
        Ok(report)
    }

    /// Validation metrics: posterior-mean reconstructions of the held-out
    /// patches under their fixed masks, or of the first training batch
    /// when nothing is held out.
    pub fn validation_metrics(&self) -> Result<ImageMetrics> {
        let d = self.model.config().latent_dim;
        let zero = vec![0.0; d];
        let set: Vec<(usize, usize)> = if self.val.is_empty() {
            self.train_idx.iter().take(self.config.batch_size).map(|&p| (p, 0)).collect()
        } else {
            self.val.clone()
        };
        let outs: Vec<Result<Array2<f64>>> = set
            .par_iter()
            .map(|&(p, m)| {
                self.model
                    .forward_arrays(&self.patches[p].image, &self.pool[m], &zero)
                    .map(|(o, _)| o)
            })
            .collect();
        let outs = outs.into_iter().collect::<Result<Vec<_>>>()?;
        pooled_metrics(
            outs.iter().zip(set.iter().map(|&(p, _)| &self.patches[p].image)),
            self.config.peak,
        )
    }

    fn log_epoch(&mut self) -> Result<()> {
        let n = self.epoch_acc[4];
        if n == 0.0 {
            return Ok(());
        }
        let a = self.epoch_acc;
        let loss = LossReport::new(a[0] / n, a[1] / n, a[2] / n, a[3] / n, &self.config.weights)?;
        let spe = self.steps_per_epoch();
        let epoch = (self.step - 1) / spe;
        let row = MetricsRow::new(epoch, self.step, &loss, &self.validation_metrics()?);
        if let Some(dir) = &self.out_dir {
            append_rows(dir.join(METRICS_FILE), &[row])?;
        }
        self.rows.push(row);
        self.epoch_acc = [0.0; 5];
        Ok(())
    }

    /// Run until `total_steps`, log any partial epoch and save the final
    /// model.
    pub fn run(&mut self) -> Result<()> {
        let total = self.total_steps();
        while self.step < total {
            self.step_once()?;
        }
        self.log_epoch()?;
        if let Some(dir) = self.out_dir.clone() {
            let path = dir.join(FINAL_CHECKPOINT);
            self.save_checkpoint(&path)?;
            self.checkpoints.push(path);
        }
        Ok(())
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = self.model.to_container()?;
        let n = self.adam.m.len();
        c.insert("optim.m", vec![n], self.adam.m.clone());
        c.insert("optim.v", vec![n], self.adam.v.clone());
        c.insert("train.epoch_acc", vec![5], self.epoch_acc.to_vec());
        c.metadata.insert("optim.t".into(), self.adam.t.to_string());
        c.metadata.insert("train.step".into(), self.step.to_string());
        c.metadata
            .insert("train_config".into(), serde_json::to_string(&self.config)?);
        Ok(c)
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container()?.save(path)
    }

    /// Rebuild a trainer from a checkpoint written by [`Trainer::save_checkpoint`].
    pub fn resume(
        path: impl AsRef<Path>,
        patches: &'a [Patch],
        pool: &'a [Array2<f64>],
        extractor: &'a FeatureExtractor,
        spectrum: &PowerSpectrum,
    ) -> Result<Self> {
        let c = Container::load(path)?;
        let model = VaeModel::from_container(&c)?;
        let config: TrainConfig = serde_json::from_str(c.meta("train_config")?)?;
        let mut t = Self::new(model, patches, pool, extractor, spectrum, config)?;
        let parse = |k: &str| -> Result<u64> {
            c.meta(k)?
                .parse()
                .map_err(|e| Error::Checkpoint(format!("metadata `{k}`: {e}")))
        };
        t.adam.t = parse("optim.t")?;
        t.step = parse("train.step")?;
        let n = t.model.n_params();
        for (name, dst) in [("optim.m", &mut t.adam.m), ("optim.v", &mut t.adam.v)] {
            let a = c.get(name)?;
            if a.data.len() != n {
                return Err(Error::Checkpoint(format!("`{name}` has {} entries, model has {n}", a.data.len())));
            }
            dst.copy_from_slice(&a.data);
        }
        let acc = c.get("train.epoch_acc")?;
        if acc.data.len() != 5 {
            return Err(Error::Checkpoint("`train.epoch_acc` must have 5 entries".into()));
        }
        t.epoch_acc.copy_from_slice(&acc.data);
        Ok(t)
    }
}

/// Result of [`train`].
pub struct TrainOutcome {
    pub model: VaeModel,
    pub rows: Vec<MetricsRow>,
    pub checkpoints: Vec<PathBuf>,
}

/// Train `model` on clean patches with masks drawn from `pool`. When
/// `out_dir` is given, metrics go to `metrics.csv` and checkpoints under
/// it.
pub fn train(
    model: VaeModel,
    patches: &[Patch],
    pool: &[Array2<f64>],
    extractor: &FeatureExtractor,
    spectrum: &PowerSpectrum,
    config: TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let mut t = Trainer::new(model, patches, pool, extractor, spectrum, config)?;
    if let Some(d) = out_dir {
        t = t.with_output(d)?;
    }
    t.run()?;
    Ok(TrainOutcome {
        rows: t.rows.clone(),
        checkpoints: t.checkpoints.clone(),
        model: t.model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::FeatureExtractorSpec;
    use crate::sphere_data::{NormalizationRecord, PatchSpec};
    use crate::vae::ModelConfig;

    fn toy_model() -> VaeModel {
        VaeModel::init(ModelConfig {
            input_hw: (16, 16),
            encoder_widths: vec![4, 8],
            decoder_widths: vec![8, 4],
            fc_layers: 2,
            fc_hidden: 16,
            latent_dim: 4,
            seed: 1,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    fn toy_data(n: usize) -> (Vec<Patch>, Vec<Array2<f64>>) {
        let spec = PatchSpec {
            height_px: 16,
            width_px: 16,
            ..PatchSpec::default()
        };
        let patches = (0..n)
            .map(|k| {
                let img = Array2::from_shape_fn((16, 16), |(y, x)| {
                    0.5 + 0.3 * ((x as f64 + k as f64) * 0.4).sin() * ((y as f64) * 0.3).cos()
                });
                Patch::new(img, Array2::zeros((16, 16)), PatchSpec { patch_id: k, ..spec }, NormalizationRecord::identity())
                    .unwrap()
            })
            .collect();
        let mut rng = seeding::rng_from_seed(4);
        let pool = (0..3)
            .map(|_| crate::sphere_data::synthetic::random_patch_mask(16, 16, &mut rng))
            .collect();
        (patches, pool)
    }

    fn spectrum() -> PowerSpectrum {
        PowerSpectrum::flat(8, 1.0).unwrap()
    }

    #[test]
    fn pairing_examples() {
        let pool = vec![Array2::from_elem((2, 2), 1.0)];
        let p = pair_masks(10, &pool, 3, 0).unwrap();
        assert!(p.iter().all(|&(_, m)| m == 0));
        let mut seen: Vec<usize> = p.iter().map(|&(i, _)| i).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert_eq!(p, pair_masks(10, &pool, 3, 0).unwrap());
        assert_ne!(pair_masks(10, &pool, 3, 1).unwrap(), p);
        assert_eq!(pair_masks(3, &[], 0, 0).unwrap_err().code(), "empty-mask-pool");
        assert_eq!(
            pair_masks(3, &[Array2::zeros((2, 2))], 0, 0).unwrap_err().code(),
            "mask-without-holes"
        );
    }

    #[test]
    fn mask_selection_is_uniform() {
        let pool: Vec<Array2<f64>> = (0..4).map(|_| Array2::from_elem((1, 1), 1.0)).collect();
        let mut counts = [0usize; 4];
        let mut n = 0;
        for epoch in 0..100 {
            for (_, m) in pair_masks(100, &pool, 9, epoch).unwrap() {
                counts[m] += 1;
                n += 1;
            }
        }
        assert_eq!(n, 10_000);
        let p = 0.25;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn zero_learning_rate_freezes_weights() {
        let (patches, pool) = toy_data(8);
        let ext = FeatureExtractor::build(&FeatureExtractorSpec::default()).unwrap();
        let model = toy_model();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            max_epochs: 1,
            ..TrainConfig::default()
        };
        let out = train(model.clone(), &patches, &pool, &ext, &spectrum(), cfg, None).unwrap();
        assert_eq!(out.model.params(), model.params());
        assert_eq!(out.rows.len(), 1);
    }

    #[test]
    fn frozen_batch_loss_decreases() {
        let (patches, pool) = toy_data(4);
        let ext = FeatureExtractor::build(&FeatureExtractorSpec::default()).unwrap();
        let mut model = toy_model();
        let prior = prior_variances(&spectrum(), 4).unwrap();
        let ctx = LossContext {
            extractor: &ext,
            prior_var: &prior,
            weights: LossWeights::default(),
            options: LossOptions::default(),
        };
        let mut rng = seeding::rng_from_seed(2);
        let samples: Vec<Sample<'_>> = patches
            .iter()
            .zip(pool.iter().cycle())
            .map(|(p, m)| Sample {
                image: &p.image,
                mask: m,
                noise: standard_normal(&mut rng, 4),
            })
            .collect();
        let cfg = AdamConfig {
            learning_rate: 1e-4,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(model.n_params());
        let segs = model.segments().to_vec();
        let mut losses = Vec::new();
        for _ in 0..20 {
            let (r, g) = batch_gradient(&model, &samples, &ctx).unwrap();
            losses.push(r.total);
            adam_step(model.params_mut(), &g, &mut state, &cfg, &segs).unwrap();
        }
        let last = evaluate_loss(&model, &samples, &ctx).unwrap().total;
        assert!(last < losses[0], "{losses:?} -> {last}");
    }

    #[test]
    fn rows_follow_the_psnr_identity_and_runs_repeat() {
        let (patches, pool) = toy_data(10);
        let ext = FeatureExtractor::build(&FeatureExtractorSpec::default()).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            max_epochs: 2,
            batch_size: 3,
            ..TrainConfig::default()
        };
        let a = train(toy_model(), &patches, &pool, &ext, &spectrum(), cfg.clone(), None).unwrap();
        let b = train(toy_model(), &patches, &pool, &ext, &spectrum(), cfg, None).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.rows.len(), 2);
        assert_eq!(a.rows[1].step, 6);
        for r in &a.rows {
            assert_eq!(r.psnr, 10.0 * (1.0 / r.mse).log10());
            assert_eq!(r.total, 6.0 * r.rec + 0.05 * r.kl + 0.05 * r.perceptual + 0.1 * r.tv);
        }
    }

    #[test]
    fn resume_matches_an_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let (patches, pool) = toy_data(10);
        let ext = FeatureExtractor::build(&FeatureExtractorSpec::default()).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            max_steps: Some(7),
            batch_size: 2,
            ..TrainConfig::default()
        };
        let mut full = Trainer::new(toy_model(), &patches, &pool, &ext, &spectrum(), cfg.clone()).unwrap();
        for _ in 0..7 {
            full.step_once().unwrap();
        }
        let mut part = Trainer::new(toy_model(), &patches, &pool, &ext, &spectrum(), cfg).unwrap();
        for _ in 0..3 {
            part.step_once().unwrap();
        }
        let ck = dir.path().join("ck.safetensors");
        part.save_checkpoint(&ck).unwrap();
        drop(part);
        let mut resumed = Trainer::resume(&ck, &patches, &pool, &ext, &spectrum()).unwrap();
        assert_eq!(resumed.step, 3);
        for _ in 0..4 {
            resumed.step_once().unwrap();
        }
        assert_eq!(resumed.model.params(), full.model.params());
        assert_eq!(resumed.adam, full.adam);
        assert_eq!(resumed.rows().last(), full.rows().last());
    }

    #[test]
    fn checkpoints_and_csv_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let (patches, pool) = toy_data(6);
        let ext = FeatureExtractor::build(&FeatureExtractorSpec::default()).unwrap();
        let cfg = TrainConfig {
            max_steps: Some(4),
            checkpoint_every: 2,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let out = train(toy_model(), &patches, &pool, &ext, &spectrum(), cfg, Some(dir.path())).unwrap();
        assert_eq!(out.checkpoints.len(), 3);
        assert!(out.checkpoints.iter().all(|p| p.exists()));
        let rows = super::super::metrics::read_rows(dir.path().join(METRICS_FILE)).unwrap();
        assert_eq!(rows, out.rows);
        assert_eq!(VaeModel::load(&out.checkpoints[2]).unwrap(), out.model);
    }

    #[test]
    fn patches_with_holes_are_rejected() {
        let (mut patches, pool) = toy_data(3);
        patches[1].mask[(0, 0)] = 1.0;
        let ext = FeatureExtractor::build(&FeatureExtractorSpec::default()).unwrap();
        assert!(Trainer::new(toy_model(), &patches, &pool, &ext, &spectrum(), TrainConfig::default()).is_err());
    }
}
