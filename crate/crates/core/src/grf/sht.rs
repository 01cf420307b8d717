//! Direct spherical harmonic transforms on HEALPix rings.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use super::alm::{alm_count, alm_index, AlmSet};
use super::spectrum::FieldConstants;
use crate::error::{Error, Result};
use crate::healpix::{self, RingInfo};
use crate::sphere_data::SphereMap;

/// Largest multipole the direct transforms accept.
pub const ELL_MAX_LIMIT: usize = 64;

/// Default number of refinement sweeps in [`analyze`].
pub const ANALYSIS_ITERATIONS: usize = 3;

/// Normalized associated Legendre functions `lambda_lm(cos theta)` such that
/// `Y_lm(theta, phi) = lambda_lm(cos theta) e^{i m phi}`, in [`alm_index`]
/// order.
pub fn legendre_table(ell_max: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; alm_count(ell_max)];
    let s = (1.0 - x * x).max(0.0).sqrt();
    let mut pmm = (1.0 / (4.0 * PI)).sqrt();
    for m in 0..=ell_max {
        if m > 0 {
            let mf = m as f64;
            pmm *= -((2.0 * mf + 1.0) / (2.0 * mf)).sqrt() * s;
        }
        out[alm_index(m, m)] = pmm;
        if m == ell_max {
            break;
        }
        let mut p_prev = pmm;
        let mut p = x * (2.0 * m as f64 + 3.0).sqrt() * pmm;
        out[alm_index(m + 1, m)] = p;
        let m2 = (m * m) as f64;
        for ell in m + 2..=ell_max {
            let l = ell as f64;
            let a = ((4.0 * l * l - 1.0) / (l * l - m2)).sqrt();
            let lp = l - 1.0;
            let b = ((lp * lp - m2) / (4.0 * lp * lp - 1.0)).sqrt();
            let next = a * (x * p - b * p_prev);
            p_prev = p;
            p = next;
            out[alm_index(ell, m)] = p;
        }
    }
    out
}

fn check_ell_max(ell_max: usize) -> Result<()> {
    if ell_max > ELL_MAX_LIMIT {
        return Err(Error::EllMaxTooLarge {
            ell_max,
            limit: ELL_MAX_LIMIT,
        });
    }
    Ok(())
}

fn synthesize_ring(alm: &AlmSet, ring: &RingInfo) -> Vec<f64> {
    let ell_max = alm.ell_max();
    let lam = legendre_table(ell_max, ring.z);
    let fm: Vec<Complex64> = (0..=ell_max)
        .map(|m| {
            (m..=ell_max)
                .map(|ell| alm.get(ell, m) * lam[alm_index(ell, m)])
                .sum()
        })
        .collect();
    (0..ring.n_pixels)
        .map(|j| {
            let phi = ring.phi(j);
            let mut v = fm[0].re;
            for (m, f) in fm.iter().enumerate().skip(1) {
                let (s, c) = (m as f64 * phi).sin_cos();
                v += 2.0 * (f.re * c - f.im * s);
            }
            v
        })
        .collect()
}

/// Evaluate the real field `sum_lm a_lm Y_lm` at every pixel centre. With
/// `constants` the result is the physical temperature `t_cmb (1 + field)`.
pub fn synthesize(alm: &AlmSet, n_side: u32, constants: Option<FieldConstants>) -> Result<SphereMap> {
    check_ell_max(alm.ell_max())?;
    healpix::check_nside(n_side)?;
    let rings = healpix::rings(n_side);
    let per_ring: Vec<Vec<f64>> = rings.par_iter().map(|r| synthesize_ring(alm, r)).collect();
    let mut values: Vec<f64> = per_ring.into_iter().flatten().collect();
    if let Some(c) = constants {
        for v in &mut values {
            *v = c.t_cmb * (1.0 + *v);
        }
    }
    SphereMap::ring(n_side, values)
}

fn quadrature(values: &[f64], n_side: u32, ell_max: usize) -> AlmSet {
    let rings = healpix::rings(n_side);
    let weight = 4.0 * PI / healpix::npix(n_side) as f64;
    let per_ring: Vec<Vec<Complex64>> = rings
        .par_iter()
        .map(|ring| {
            let lam = legendre_table(ell_max, ring.z);
            let px = &values[ring.first_pixel..ring.first_pixel + ring.n_pixels];
            let mut out = vec![Complex64::new(0.0, 0.0); alm_count(ell_max)];
            for m in 0..=ell_max {
                let mut g = Complex64::new(0.0, 0.0);
                for (j, v) in px.iter().enumerate() {
                    let (s, c) = (m as f64 * ring.phi(j)).sin_cos();
                    g += Complex64::new(v * c, -v * s);
                }
                for ell in m..=ell_max {
                    out[alm_index(ell, m)] = g * lam[alm_index(ell, m)];
                }
            }
            out
        })
        .collect();
    let mut alm = AlmSet::zeros(ell_max);
    let mut acc = vec![Complex64::new(0.0, 0.0); alm_count(ell_max)];
    for ring in per_ring {
        for (a, r) in acc.iter_mut().zip(ring) {
            *a += r;
        }
    }
    for ell in 0..=ell_max {
        for m in 0..=ell {
            alm.set(ell, m, acc[alm_index(ell, m)] * weight);
        }
    }
    alm
}

/// Harmonic coefficients of a full-sky map by equal-area quadrature,
/// refined with `iterations` residual sweeps (`a += A(map - S a)`).
pub fn analyze_iter(map: &SphereMap, ell_max: usize, iterations: usize) -> Result<AlmSet> {
    check_ell_max(ell_max)?;
    let n_side = map.n_side();
    if ell_max > 3 * n_side as usize - 1 {
        return Err(Error::EllMaxTooLarge {
            ell_max,
            limit: 3 * n_side as usize - 1,
        });
    }
    let map = map.to_ring();
    if let Some(i) = (0..map.npix()).find(|&i| map.is_bad(i)) {
        return Err(Error::NonFinite {
            index: i,
            value: map.values()[i],
        });
    }
    let values = map.values();
    let mut alm = quadrature(values, n_side, ell_max);
    for _ in 0..iterations {
        let model = synthesize(&alm, n_side, None)?;
        let residual: Vec<f64> = values.iter().zip(model.values()).map(|(a, b)| a - b).collect();
        let delta = quadrature(&residual, n_side, ell_max);
        for ell in 0..=ell_max {
            for m in 0..=ell {
                alm.set(ell, m, alm.get(ell, m) + delta.get(ell, m));
            }
        }
    }
    Ok(alm)
}

pub fn analyze(map: &SphereMap, ell_max: usize) -> Result<AlmSet> {
    analyze_iter(map, ell_max, ANALYSIS_ITERATIONS)
}
