//! The sky as an isotropic Gaussian random field on the sphere.

mod alm;
mod sht;
mod spectrum;

pub use alm::{alm_count, alm_index, estimate_spectrum, sample_alm, AlmSet};
pub use sht::{analyze, analyze_iter, legendre_table, synthesize, ANALYSIS_ITERATIONS, ELL_MAX_LIMIT};
pub use spectrum::{prior_variances, prior_variances_with, FieldConstants, PowerSpectrum, VARIANCE_FLOOR};
