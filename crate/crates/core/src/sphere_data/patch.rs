use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Placement and resolution of one flat patch cut from the sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub center_lat_deg: f64,
    pub center_lon_deg: f64,
    pub lat_half_extent_deg: f64,
    pub lon_half_extent_deg: f64,
    pub height_px: usize,
    pub width_px: usize,
    pub patch_id: usize,
}

impl Default for PatchSpec {
    fn default() -> Self {
        Self {
            center_lat_deg: 0.0,
            center_lon_deg: 0.0,
            lat_half_extent_deg: 5.0,
            lon_half_extent_deg: 10.0,
            height_px: 400,
            width_px: 400,
            patch_id: 0,
        }
    }
}

impl PatchSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidPatchSpec(m));
        if !(self.lat_half_extent_deg > 0.0 && self.lon_half_extent_deg > 0.0) {
            return bad(format!(
                "extents must be positive, got ({}, {})",
                self.lat_half_extent_deg, self.lon_half_extent_deg
            ));
        }
        if self.lon_half_extent_deg > 180.0 {
            return bad(format!("longitude half extent {} exceeds 180", self.lon_half_extent_deg));
        }
        if !(-90.0..=90.0).contains(&self.center_lat_deg) {
            return bad(format!("center latitude {} outside [-90, 90]", self.center_lat_deg));
        }
        if !(0.0..360.0).contains(&self.center_lon_deg) {
            return bad(format!("center longitude {} outside [0, 360)", self.center_lon_deg));
        }
        if self.height_px == 0 || self.width_px == 0 {
            return bad("patch dimensions must be positive".into());
        }
        if self.center_lat_deg.abs() + self.lat_half_extent_deg > 90.0 + 1e-9 {
            return Err(Error::PoleCrossing {
                patch_id: self.patch_id,
                center_lat_deg: self.center_lat_deg,
                lat_half_extent_deg: self.lat_half_extent_deg,
            });
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height_px, self.width_px)
    }

    /// Angular size of one pixel, `(latitude, longitude)` in degrees.
    pub fn pixel_size_deg(&self) -> (f64, f64) {
        (
            2.0 * self.lat_half_extent_deg / self.height_px as f64,
            2.0 * self.lon_half_extent_deg / self.width_px as f64,
        )
    }

    /// Latitude of row `i`'s pixel centres. Row 0 is the southern edge.
    pub fn row_lat_deg(&self, i: usize) -> f64 {
        let (dlat, _) = self.pixel_size_deg();
        self.center_lat_deg - self.lat_half_extent_deg + (i as f64 + 0.5) * dlat
    }

    /// Longitude of column `j`'s pixel centres, wrapped into `[0, 360)`.
    pub fn col_lon_deg(&self, j: usize) -> f64 {
        let (_, dlon) = self.pixel_size_deg();
        (self.center_lon_deg - self.lon_half_extent_deg + (j as f64 + 0.5) * dlon).rem_euclid(360.0)
    }

    /// Pixel centre as `(theta, phi)` in radians.
    pub fn pixel_ang(&self, i: usize, j: usize) -> (f64, f64) {
        (
            (90.0 - self.row_lat_deg(i)).to_radians(),
            self.col_lon_deg(j).to_radians(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    #[default]
    MinMax,
    ZScore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NormSource {
    #[default]
    GlobalMap,
    PerPatch,
}

/// How physical map values were scaled into network units.
///
/// `minmax`: `(v - a) / (b - a)` with `a = min`, `b = max`.
/// `zscore`: `(v - a) / b` with `a = mean`, `b = std`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    pub mode: NormMode,
    pub param_a: f64,
    pub param_b: f64,
    pub source: NormSource,
}

impl NormalizationRecord {
    pub fn new(mode: NormMode, param_a: f64, param_b: f64, source: NormSource) -> Result<Self> {
        let r = Self {
            mode,
            param_a,
            param_b,
            source,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn identity() -> Self {
        Self {
            mode: NormMode::MinMax,
            param_a: 0.0,
            param_b: 1.0,
            source: NormSource::GlobalMap,
        }
    }

    /// Fit a record to the finite entries of `values`.
    pub fn fit(mode: NormMode, source: NormSource, values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let mut n = 0usize;
        let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        let finite: Vec<f64> = values.into_iter().filter(|v| v.is_finite()).collect();
        for &v in &finite {
            lo = lo.min(v);
            hi = hi.max(v);
            sum += v;
            n += 1;
        }
        if n == 0 {
            return Err(Error::DegenerateNormalization("no finite values to fit".into()));
        }
        match mode {
            NormMode::MinMax => Self::new(mode, lo, hi, source),
            NormMode::ZScore => {
                let mean = sum / n as f64;
                let var = finite.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                Self::new(mode, mean, var.sqrt(), source)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.param_a.is_finite() && self.param_b.is_finite()) {
            return Err(Error::DegenerateNormalization("non-finite parameters".into()));
        }
        match self.mode {
            NormMode::MinMax if self.param_b <= self.param_a => Err(Error::DegenerateNormalization(format!(
                "minmax needs max > min, got ({}, {})",
                self.param_a, self.param_b
            ))),
            NormMode::ZScore if self.param_b == 0.0 => {
                Err(Error::DegenerateNormalization("zscore with zero standard deviation".into()))
            }
            _ => Ok(()),
        }
    }

    fn offset_scale(&self) -> (f64, f64) {
        match self.mode {
            NormMode::MinMax => (self.param_a, self.param_b - self.param_a),
            NormMode::ZScore => (self.param_a, self.param_b),
        }
    }

    pub fn normalize_value(&self, v: f64) -> f64 {
        let (a, s) = self.offset_scale();
        (v - a) / s
    }

    pub fn denormalize_value(&self, v: f64) -> f64 {
        let (a, s) = self.offset_scale();
        v * s + a
    }
}

pub fn normalize(values: &[f64], record: &NormalizationRecord) -> Result<Vec<f64>> {
    record.validate()?;
    Ok(values.iter().map(|&v| record.normalize_value(v)).collect())
}

pub fn denormalize(values: &[f64], record: &NormalizationRecord) -> Result<Vec<f64>> {
    record.validate()?;
    Ok(values.iter().map(|&v| record.denormalize_value(v)).collect())
}

/// A flat image cut from the sphere together with its hole mask.
///
/// `mask` marks pixels that are still missing (1 = hole). After inpainting
/// the mask is cleared and `filled` records which pixels were synthesized,
/// which is what [`super::reassemble`] writes back.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub image: Array2<f64>,
    pub mask: Array2<f64>,
    pub spec: PatchSpec,
    pub norm: NormalizationRecord,
    pub filled: Option<Array2<f64>>,
}

impl Patch {
    pub fn new(image: Array2<f64>, mask: Array2<f64>, spec: PatchSpec, norm: NormalizationRecord) -> Result<Self> {
        let p = Self {
            image,
            mask,
            spec,
            norm,
            filled: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let shape = (self.spec.height_px, self.spec.width_px);
        if self.image.dim() != shape || self.mask.dim() != shape {
            return Err(Error::Shape(format!(
                "patch {}: image {:?} / mask {:?} vs spec {:?}",
                self.spec.patch_id,
                self.image.dim(),
                self.mask.dim(),
                shape
            )));
        }
        check_binary(&self.mask)?;
        if let Some((index, &value)) = self.image.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(())
    }

    pub fn n_holes(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1.0).count()
    }

    pub fn has_holes(&self) -> bool {
        self.mask.iter().any(|&m| m == 1.0)
    }

    /// The image with every hole pixel set to zero.
    pub fn masked_image(&self) -> Array2<f64> {
        zero_holes(&self.image, &self.mask)
    }

    /// Copy of this patch carrying a different mask.
    pub fn with_mask(&self, mask: Array2<f64>) -> Result<Self> {
        Patch::new(self.image.clone(), mask, self.spec, self.norm)
    }
}

pub fn zero_holes(image: &Array2<f64>, mask: &Array2<f64>) -> Array2<f64> {
    let mut out = image.clone();
    out.zip_mut_with(mask, |v, &m| {
        if m != 0.0 {
            *v = 0.0;
        }
    });
    out
}

pub fn check_binary(mask: &Array2<f64>) -> Result<()> {
    match mask.iter().enumerate().find(|(_, &v)| v != 0.0 && v != 1.0) {
        Some((pixel, &value)) => Err(Error::NonBinaryMask { pixel, value }),
        None => Ok(()),
    }
}

/// Equally spaced patch centres covering the sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub specs: Vec<PatchSpec>,
    pub lat_step_deg: f64,
    pub lon_step_deg: f64,
    pub n_side: Option<u32>,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn get(&self, patch_id: usize) -> Option<&PatchSpec> {
        self.specs.get(patch_id)
    }

    pub fn with_nside(mut self, n_side: u32) -> Self {
        self.n_side = Some(n_side);
        self
    }
}

/// Build a lat-major grid of patch centres. Latitudes run from
/// `-90 + lat_half` to `90 - lat_half` so no patch crosses a pole; longitudes
/// start at 0 and stop before 360.
pub fn make_grid(lat_step_deg: f64, lon_step_deg: f64, template: &PatchSpec) -> Result<PatchGrid> {
    if !(lat_step_deg > 0.0 && lon_step_deg > 0.0) {
        return Err(Error::EmptyGrid(format!(
            "steps must be positive, got ({lat_step_deg}, {lon_step_deg})"
        )));
    }
    let lat_lo = -90.0 + template.lat_half_extent_deg;
    let lat_hi = 90.0 - template.lat_half_extent_deg;
    let lat_range = lat_hi - lat_lo;
    if lat_range <= 0.0 || lat_step_deg > lat_range + 1e-9 {
        return Err(Error::EmptyGrid(format!(
            "latitude step {lat_step_deg} does not fit the centre range [{lat_lo}, {lat_hi}]"
        )));
    }
    if lon_step_deg > 360.0 {
        return Err(Error::EmptyGrid(format!("longitude step {lon_step_deg} exceeds 360")));
    }
    let n_lat = (lat_range / lat_step_deg + 1e-9).floor() as usize + 1;
    let n_lon = (360.0 / lon_step_deg - 1e-9).ceil() as usize;
    let mut specs = Vec::with_capacity(n_lat * n_lon);
    for a in 0..n_lat {
        let lat = (lat_lo + a as f64 * lat_step_deg).min(lat_hi);
        for b in 0..n_lon {
            let spec = PatchSpec {
                center_lat_deg: lat,
                center_lon_deg: b as f64 * lon_step_deg,
                patch_id: specs.len(),
                ..*template
            };
            spec.validate()?;
            specs.push(spec);
        }
    }
    Ok(PatchGrid {
        specs,
        lat_step_deg,
        lon_step_deg,
        n_side: None,
    })
}
