//! Synthetic masks for desk-scale experiments.

use ndarray::Array2;
use rand::Rng;

use super::map::MaskMap;
use crate::error::Result;
use crate::healpix::{self, npix};
use crate::seeding;

/// A sky mask with a band `|lat| < band_deg` plus `n_holes` circular holes of
/// radius `hole_radius_deg` at seeded random positions.
pub fn galactic_mask(n_side: u32, band_deg: f64, n_holes: usize, hole_radius_deg: f64, seed: u64) -> Result<MaskMap> {
    let mut mask = MaskMap::empty(n_side)?;
    let mut rng = seeding::rng_from_seed(seed);
    let centres: Vec<[f64; 3]> = (0..n_holes)
        .map(|_| {
            let z: f64 = rng.random_range(-1.0..1.0);
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let s = (1.0 - z * z).sqrt();
            [s * phi.cos(), s * phi.sin(), z]
        })
        .collect();
    let cos_r = hole_radius_deg.to_radians().cos();
    for p in 0..npix(n_side) {
        let (theta, phi) = healpix::pix2ang(n_side, p);
        let lat = 90.0 - theta.to_degrees();
        let v = [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()];
        let in_hole = centres
            .iter()
            .any(|c| c[0] * v[0] + c[1] * v[1] + c[2] * v[2] >= cos_r);
        if lat.abs() < band_deg || in_hole {
            mask.set(p, true);
        }
    }
    Ok(mask)
}

/// An irregular flat mask made of 1 to 4 random ellipses, each covering a
/// few percent of the image. Always contains at least one hole pixel.
pub fn random_patch_mask<R: Rng + ?Sized>(height: usize, width: usize, rng: &mut R) -> Array2<f64> {
    let mut mask = Array2::zeros((height, width));
    let n_blobs = rng.random_range(1..=4);
    let (hf, wf) = (height as f64, width as f64);
    for _ in 0..n_blobs {
        let cy = rng.random_range(0.0..hf);
        let cx = rng.random_range(0.0..wf);
        let ry = rng.random_range(0.04..0.14) * hf + 0.5;
        let rx = rng.random_range(0.04..0.14) * wf + 0.5;
        let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let (s, c) = angle.sin_cos();
        for ((i, j), m) in mask.indexed_iter_mut() {
            let dy = i as f64 + 0.5 - cy;
            let dx = j as f64 + 0.5 - cx;
            let u = (c * dx + s * dy) / rx;
            let v = (-s * dx + c * dy) / ry;
            if u * u + v * v <= 1.0 {
                *m = 1.0;
            }
        }
    }
    if !mask.iter().any(|&m| m == 1.0) {
        let i = rng.random_range(0..height);
        let j = rng.random_range(0..width);
        mask[(i, j)] = 1.0;
    }
    mask
}
