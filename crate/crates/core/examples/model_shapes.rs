//! List the layers of the full-size network and run a forward pass through
//! a small one.
//!
//! Usage: `cargo run --release --example model_shapes`

use cosmovae::seeding::rng_from_seed;
use cosmovae::sphere_data::synthetic::random_patch_mask;
use cosmovae::vae::{standard_normal, ModelConfig, VaeModel};
use ndarray::Array2;
use rand::Rng;

fn main() -> cosmovae::Result<()> {
    let full = VaeModel::init(ModelConfig::default())?;
    let cfg = full.config();
    println!(
        "input {:?} padded to {:?}, bottleneck {:?}, latent {}",
        cfg.input_hw,
        cfg.padded_hw(),
        cfg.bottleneck(),
        cfg.latent_dim
    );
    for seg in full.segments().iter().filter(|s| s.name.ends_with(".weight")) {
        println!("{:<14} {:?}", seg.name, seg.shape);
    }
    println!("{} parameters", full.n_params());
    drop(full);

    let small = VaeModel::init(ModelConfig::small())?;
    let mut rng = rng_from_seed(1);
    let image = Array2::from_shape_fn((64, 64), |_| rng.random::<f64>());
    let mask = random_patch_mask(64, 64, &mut rng);
    let noise = standard_normal(&mut rng, 64);
    let (out, dist) = small.forward_arrays(&image, &mask, &noise)?;
    let (lo, hi) = out.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    println!("small model: {} parameters, output {:?} in [{lo:.3}, {hi:.3}], {} latent components", small.n_params(), out.dim(), dist.len());
    Ok(())
}
