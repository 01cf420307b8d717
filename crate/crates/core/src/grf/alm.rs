use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use super::spectrum::PowerSpectrum;
use crate::error::{Error, Result};
use crate::seeding;

/// Harmonic coefficients `a_lm` of a real field, stored for `0 <= m <= l`.
/// Negative orders follow from `a_{l,-m} = (-1)^m conj(a_lm)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlmSet {
    ell_max: usize,
    coeffs: Vec<Complex64>,
}

pub fn alm_index(ell: usize, m: usize) -> usize {
    ell * (ell + 1) / 2 + m
}

pub fn alm_count(ell_max: usize) -> usize {
    (ell_max + 1) * (ell_max + 2) / 2
}

impl AlmSet {
    pub fn zeros(ell_max: usize) -> Self {
        Self {
            ell_max,
            coeffs: vec![Complex64::new(0.0, 0.0); alm_count(ell_max)],
        }
    }

    pub fn from_coeffs(ell_max: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != alm_count(ell_max) {
            return Err(Error::Shape(format!(
                "{} coefficients for ell_max {ell_max}, expected {}",
                coeffs.len(),
                alm_count(ell_max)
            )));
        }
        for ell in 0..=ell_max {
            if coeffs[alm_index(ell, 0)].im != 0.0 {
                return Err(Error::Shape(format!("a_{ell}0 must be real")));
            }
        }
        Ok(Self { ell_max, coeffs })
    }

    pub fn ell_max(&self) -> usize {
        self.ell_max
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn get(&self, ell: usize, m: usize) -> Complex64 {
        assert!(m <= ell && ell <= self.ell_max, "a_{ell}{m} out of range");
        self.coeffs[alm_index(ell, m)]
    }

    /// Value at a possibly negative order, expanded by the reality condition.
    pub fn get_signed(&self, ell: usize, m: i64) -> Complex64 {
        let a = self.get(ell, m.unsigned_abs() as usize);
        if m >= 0 {
            a
        } else if m % 2 == 0 {
            a.conj()
        } else {
            -a.conj()
        }
    }

    /// Set `a_lm`; the imaginary part of an `m = 0` coefficient is dropped.
    pub fn set(&mut self, ell: usize, m: usize, value: Complex64) {
        assert!(m <= ell && ell <= self.ell_max, "a_{ell}{m} out of range");
        let v = if m == 0 { Complex64::new(value.re, 0.0) } else { value };
        self.coeffs[alm_index(ell, m)] = v;
    }
}

/// Draw `a_lm` for an isotropic Gaussian field: `a_l0 ~ N(0, C_l)` and, for
/// `m > 0`, real and imaginary parts independently `N(0, C_l / 2)`.
pub fn sample_alm(spectrum: &PowerSpectrum, seed: u64) -> AlmSet {
    let mut rng = seeding::rng_from_seed(seed);
    let ell_max = spectrum.ell_max();
    let mut alm = AlmSet::zeros(ell_max);
    for ell in 0..=ell_max {
        let c = spectrum.get(ell);
        let sd0 = c.sqrt();
        let sd = (c / 2.0).sqrt();
        let g: f64 = rng.sample(StandardNormal);
        alm.coeffs[alm_index(ell, 0)] = Complex64::new(sd0 * g, 0.0);
        for m in 1..=ell {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            alm.coeffs[alm_index(ell, m)] = Complex64::new(sd * re, sd * im);
        }
    }
    alm
}

/// Full-sky estimator `C_l = sum_m |a_lm|^2 / (2l + 1)` over `-l <= m <= l`.
pub fn estimate_spectrum(alm: &AlmSet) -> PowerSpectrum {
    let values = (0..=alm.ell_max)
        .map(|ell| {
            let mut s = alm.get(ell, 0).norm_sqr();
            for m in 1..=ell {
                s += 2.0 * alm.get(ell, m).norm_sqr();
            }
            s / (2 * ell + 1) as f64
        })
        .collect();
    PowerSpectrum::new(values).expect("sums of squares are non-negative")
}
