//! Train a small model on synthetic sky patches and compare its hole
//! reconstruction with mean fill. Takes a few minutes on one core.
//!
//! Usage: `cargo run --release --example train_smoke [steps]`

use cosmovae::engine::{evaluate_loss, Sample, TrainConfig, Trainer};
use cosmovae::grf::{prior_variances, sample_alm, synthesize, PowerSpectrum};
use cosmovae::inpaint::mean_fill;
use cosmovae::losses::{FeatureExtractor, FeatureExtractorSpec, LossContext};
use cosmovae::seeding::rng_from_seed;
use cosmovae::sphere_data::{make_grid, segment, synthetic::random_patch_mask, MaskMap, PatchSpec, SegmentOptions};
use cosmovae::vae::{standard_normal, ModelConfig, VaeModel};

fn hole_mse(out: &ndarray::Array2<f64>, truth: &ndarray::Array2<f64>, mask: &ndarray::Array2<f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0.0);
    for ((&o, &y), &h) in out.iter().zip(truth).zip(mask) {
        if h == 1.0 {
            s += (o - y).powi(2);
            n += 1.0;
        }
    }
    s / n
}

fn main() -> cosmovae::Result<()> {
    let steps: u64 = std::env::args().nth(1).map_or(200, |s| s.parse().expect("steps must be an integer"));
    let cl = PowerSpectrum::from_fn(32, |l| 1.0 / ((l * (l + 1)) as f64 + 1.0))?;
    let map = synthesize(&sample_alm(&cl, 11), 32, None)?;
    let template = PatchSpec {
        height_px: 32,
        width_px: 32,
        ..PatchSpec::default()
    };
    let grid = make_grid(10.0, 20.0, &template)?;
    let (patches, _) = segment(&map, &MaskMap::empty(32)?, &grid, SegmentOptions::default())?;
    let (train, test) = patches.split_at(256);
    let test = &test[..20];
    let mut rng = rng_from_seed(5);
    let pool: Vec<_> = (0..64).map(|_| random_patch_mask(32, 32, &mut rng)).collect();

    let model = VaeModel::init(ModelConfig {
        input_hw: (32, 32),
        latent_dim: 16,
        seed: 3,
        ..ModelConfig::default().with_widths(&[16, 32, 64, 64, 64, 64])
    })?;
    let ext = FeatureExtractor::build(&FeatureExtractorSpec::default())?;
    let prior = PowerSpectrum::flat(16, 1.0)?;
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        max_steps: Some(steps),
        ..TrainConfig::default()
    };
    let prior_var = prior_variances(&prior, 16)?;
    let ctx = LossContext {
        extractor: &ext,
        prior_var: &prior_var,
        weights: cfg.weights,
        options: cfg.loss_options,
    };
    let mut noise_rng = rng_from_seed(8);
    let eval: Vec<Sample> = test
        .iter()
        .zip(&pool)
        .map(|(p, m)| Sample {
            image: &p.image,
            mask: m,
            noise: standard_normal(&mut noise_rng, 16),
        })
        .collect();
    let before = evaluate_loss(&model, &eval, &ctx)?;
    let mut trainer = Trainer::new(model, train, &pool, &ext, &prior, cfg)?;
    trainer.run()?;
    let after = evaluate_loss(&trainer.model, &eval, &ctx)?;
    println!("composite loss {:.4} -> {:.4} after {steps} steps", before.total, after.total);
    for r in trainer.rows() {
        println!("epoch {} step {}: total {:.4}, val psnr {:.2} dB", r.epoch, r.step, r.total, r.psnr);
    }

    let (mut vae, mut fill) = (0.0, 0.0);
    for (p, m) in test.iter().zip(&pool) {
        let (out, _) = trainer.model.forward_arrays(&p.image, m, &[0.0; 16])?;
        let filled = mean_fill(&p.with_mask(m.clone())?)?;
        vae += hole_mse(&out, &p.image, m) / test.len() as f64;
        fill += hole_mse(&filled.image, &p.image, m) / test.len() as f64;
    }
    println!("hole MSE over {} test patches: model {vae:.5}, mean fill {fill:.5}", test.len());
    Ok(())
}
