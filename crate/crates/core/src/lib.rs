//! Variational-autoencoder inpainting of spherical sky maps.
//!
//! The crate is organised along the pipeline:
//!
//! * [`sphere_data`] reads HEALPix maps and masks, cuts them into flat
//!   plate-carrée patches and writes inpainted patches back onto the sphere.
//! * [`grf`] models the sky as an isotropic Gaussian random field: harmonic
//!   coefficient sampling, synthesis, analysis and power-spectrum estimation.
//! * [`vae`] is the convolutional encoder/decoder with a Gaussian latent whose
//!   prior variances come from the angular power spectrum.
//! * [`losses`] holds the reconstruction, KL, perceptual and total-variation
//!   terms and their weighted sum, each with its gradient.
//! * [`engine`] trains the model with Adam and tracks image metrics.
//! * [`inpaint`] fills holes, estimates per-pixel uncertainty from repeated
//!   latent draws, and assembles full-sky results.
//! * [`cli`] wires everything into the `cosmovae` batch command.

pub mod cli;
pub mod container;
pub mod engine;
pub mod error;
pub mod grf;
pub mod healpix;
pub mod inpaint;
pub mod losses;
pub mod nn;
pub mod seeding;
pub mod sphere_data;
pub mod vae;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
