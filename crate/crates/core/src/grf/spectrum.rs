use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Angular power spectrum `C_l` for `l = 0..=ell_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSpectrum {
    values: Vec<f64>,
}

impl PowerSpectrum {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidSpectrum("no multipoles".into()));
        }
        if let Some((l, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidSpectrum(format!("C_{l} = {v}")));
        }
        Ok(Self { values })
    }

    pub fn from_fn(ell_max: usize, f: impl Fn(usize) -> f64) -> Result<Self> {
        Self::new((0..=ell_max).map(f).collect())
    }

    pub fn flat(ell_max: usize, value: f64) -> Result<Self> {
        Self::from_fn(ell_max, |_| value)
    }

    pub fn ell_max(&self) -> usize {
        self.values.len() - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, ell: usize) -> f64 {
        self.values[ell]
    }

    /// Parse a two-column `l C_l` text file. Lines starting with `#` and
    /// blank lines are skipped; extra columns are ignored; `l` must run
    /// contiguously from 0.
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty());
            let bad = |what: &str| Error::InvalidSpectrum(format!("line {}: {what}", n + 1));
            let ell: f64 = cols
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("unreadable multipole"))?;
            let cl: f64 = cols
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("unreadable C_l"))?;
            if ell != values.len() as f64 {
                return Err(bad(&format!("expected l = {}, found {ell}", values.len())));
            }
            values.push(cl);
        }
        Self::new(values)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# ell C_ell\n");
        for (l, c) in self.values.iter().enumerate() {
            // {:e} prints the shortest representation that round-trips
            let _ = writeln!(s, "{l} {c:e}");
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Mean CMB temperature used when emitting maps in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldConstants {
    pub t_cmb: f64,
}

impl Default for FieldConstants {
    fn default() -> Self {
        Self { t_cmb: 2.7255 }
    }
}

impl FieldConstants {
    pub fn new(t_cmb: f64) -> Result<Self> {
        if !(t_cmb > 0.0 && t_cmb.is_finite()) {
            return Err(Error::Config(format!("t_cmb must be positive, got {t_cmb}")));
        }
        Ok(Self { t_cmb })
    }
}

pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Prior variance of each latent component. Component `k` takes `C_l` at
/// `l = ell_of(k)`, floored at `floor`.
pub fn prior_variances_with(
    spectrum: &PowerSpectrum,
    latent_dim: usize,
    floor: f64,
    ell_of: impl Fn(usize) -> usize,
) -> Result<Vec<f64>> {
    (0..latent_dim)
        .map(|k| {
            let ell = ell_of(k);
            spectrum.values.get(ell).map(|c| c.max(floor)).ok_or_else(|| {
                Error::InvalidSpectrum(format!(
                    "latent component {k} needs C_{ell} but the spectrum stops at l = {}",
                    spectrum.ell_max()
                ))
            })
        })
        .collect()
}

/// Prior variances with the identity component-to-multipole mapping and the
/// default floor.
pub fn prior_variances(spectrum: &PowerSpectrum, latent_dim: usize) -> Result<Vec<f64>> {
    prior_variances_with(spectrum, latent_dim, VARIANCE_FLOOR, |k| k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_is_exact() {
        let s = PowerSpectrum::from_fn(20, |l| 1000.0 / ((l * (l + 1)) as f64 + 1.0)).unwrap();
        assert_eq!(PowerSpectrum::parse(&s.to_text()).unwrap(), s);
    }

    #[test]
    fn parse_accepts_comments_and_extra_columns() {
        let s = PowerSpectrum::parse("# header\n0 1.0 9\n\n1 2.5 9\n2 0\n").unwrap();
        assert_eq!(s.values(), &[1.0, 2.5, 0.0]);
        assert!(PowerSpectrum::parse("0 1\n2 1\n").is_err());
        assert!(PowerSpectrum::parse("0 -1\n").is_err());
        assert!(PowerSpectrum::parse("# nothing\n").is_err());
    }

    #[test]
    fn prior_variances_flat_floor_and_bounds() {
        let flat = PowerSpectrum::flat(9, 2.5).unwrap();
        assert_eq!(prior_variances(&flat, 10).unwrap(), vec![2.5; 10]);
        assert!(prior_variances(&flat, 11).is_err());
        let mut v = vec![1.0; 8];
        v[5] = 0.0;
        let s = PowerSpectrum::new(v).unwrap();
        let p = prior_variances(&s, 8).unwrap();
        assert_eq!(p[5], 1e-12);
        assert_eq!(p[4], 1.0);
        let shifted = prior_variances_with(&flat, 3, 0.0, |k| k + 2).unwrap();
        assert_eq!(shifted.len(), 3);
    }

    #[test]
    fn t_cmb_must_be_positive() {
        assert!(FieldConstants::new(0.0).is_err());
        assert_eq!(FieldConstants::default().t_cmb, 2.7255);
    }
}
