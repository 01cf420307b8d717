//! Inpaint the holes of a masked sky and estimate per-pixel uncertainty by
//! repeated latent draws. Loads a checkpoint if one is given, otherwise uses
//! an untrained model.
//!
//! Usage: `cargo run --release --example inpaint_uq [model.safetensors]`

use cosmovae::grf::{sample_alm, synthesize, PowerSpectrum};
use cosmovae::inpaint::{inpaint_sky, SkyOptions};
use cosmovae::sphere_data::{make_grid, synthetic::galactic_mask, PatchSpec};
use cosmovae::vae::{ModelConfig, VaeModel};

fn main() -> cosmovae::Result<()> {
    let model = match std::env::args().nth(1) {
        Some(path) => VaeModel::load(path)?,
        None => VaeModel::init(ModelConfig {
            input_hw: (32, 32),
            latent_dim: 16,
            ..ModelConfig::default().with_widths(&[8, 16, 32])
        })?,
    };
    let (h, w) = model.config().input_hw;
    let cl = PowerSpectrum::from_fn(32, |l| 1.0 / ((l * (l + 1)) as f64 + 1.0))?;
    let map = synthesize(&sample_alm(&cl, 3), 32, None)?;
    let mask = galactic_mask(32, 0.0, 6, 3.0, 4)?;
    let template = PatchSpec {
        height_px: h,
        width_px: w,
        ..PatchSpec::default()
    };
    let grid = make_grid(10.0, 20.0, &template)?;
    let opts = SkyOptions {
        noise_seed: 9,
        uq_samples: Some(20),
        ..SkyOptions::default()
    };
    let result = inpaint_sky(&model, &map, &mask, &grid, &opts)?;
    let changed = map.values().iter().zip(result.map.values()).filter(|(a, b)| a != b).count();
    println!("{} hole pixels, {} patches inpainted, {changed} sky pixels rewritten", mask.n_holes(), result.patches.len());
    for uq in result.uq.iter().take(5) {
        let mean_std = uq.std_image.sum() / uq.std_image.len() as f64;
        let max_std = uq.std_image.iter().cloned().fold(0.0, f64::max);
        println!("patch {:>3}: {} draws, mean std {mean_std:.4}, max std {max_std:.4}", uq.patch_id, uq.n_samples);
    }
    Ok(())
}
