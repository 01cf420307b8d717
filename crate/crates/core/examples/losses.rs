//! Evaluate each term of the training loss on a toy prediction.
//!
//! Usage: `cargo run --release --example losses`

use cosmovae::losses::{
    composite_loss, dilate_mask, kl_loss, rec_loss, tv_loss, Connectivity, FeatureExtractor, FeatureExtractorSpec,
    LossContext, LossOptions, LossWeights,
};
use cosmovae::vae::LatentDistribution;
use ndarray::Array2;

fn main() -> cosmovae::Result<()> {
    let y = Array2::from_shape_fn((32, 32), |(i, j)| ((i as f64) / 5.0).sin() * ((j as f64) / 7.0).cos() * 0.5 + 0.5);
    let mask = Array2::from_shape_fn((32, 32), |(i, j)| if (10..18).contains(&i) && (12..22).contains(&j) { 1.0 } else { 0.0 });
    let y_hat = y.mapv(|v| 0.9 * v + 0.05);
    let dist = LatentDistribution {
        mu: vec![0.2, -0.1, 0.4],
        log_var: vec![-0.5, 0.1, 0.0],
    };
    let prior_var = [1.0, 0.5, 0.25];

    let region = dilate_mask(&mask, Connectivity::Eight);
    let n_hole = mask.iter().filter(|&&m| m == 1.0).count();
    println!("hole pixels {n_hole}, dilated region {}", region.iter().filter(|&&r| r).count());
    println!("rec {:.6}", rec_loss(&y_hat, &y, &mask)?);
    println!("kl  {:.6}", kl_loss(&dist, &prior_var)?);
    println!("tv  {:.6}", tv_loss(&y_hat, &region, n_hole)?);

    let extractor = FeatureExtractor::build(&FeatureExtractorSpec::default())?;
    let ctx = LossContext {
        extractor: &extractor,
        prior_var: &prior_var,
        weights: LossWeights::default(),
        options: LossOptions::default(),
    };
    let report = composite_loss(&y_hat, &y, &mask, &dist, &ctx)?;
    println!("{report:#?}");
    Ok(())
}
