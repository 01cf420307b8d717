use std::collections::HashMap;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::map::{MaskMap, Ordering, SphereMap};
use super::patch::{NormMode, NormSource, NormalizationRecord, Patch, PatchGrid, PatchSpec};
use crate::error::{Error, Result};
use crate::healpix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    Nearest,
    #[default]
    Bilinear,
}

/// Sample `map` on the plate-carrée pixel centres of `spec`.
///
/// Nearest mode reads the HEALPix pixel containing each centre; bilinear mode
/// interpolates in longitude within the two bracketing rings and then in
/// colatitude. Pixels that touch a missing sphere pixel come back as NaN.
pub fn project_patch(map: &SphereMap, spec: &PatchSpec, interp: Interp) -> Result<Array2<f64>> {
    spec.validate()?;
    let ring;
    let map = if map.ordering() == Ordering::Ring {
        map
    } else {
        ring = map.to_ring();
        &ring
    };
    let n_side = map.n_side();
    let values = map.values();
    let (h, w) = spec.shape();
    let mut out = Array2::zeros((h, w));
    for ((i, j), v) in out.indexed_iter_mut() {
        let (theta, phi) = spec.pixel_ang(i, j);
        *v = match interp {
            Interp::Nearest => {
                let p = healpix::ang2pix(n_side, theta, phi);
                if map.is_bad(p) {
                    f64::NAN
                } else {
                    values[p]
                }
            }
            Interp::Bilinear => {
                let (pix, wgt) = healpix::interp_weights(n_side, theta, phi);
                let mut acc = 0.0;
                for (&p, &wt) in pix.iter().zip(&wgt) {
                    if wt != 0.0 && map.is_bad(p) {
                        acc = f64::NAN;
                        break;
                    }
                    acc += wt * values[p];
                }
                acc
            }
        };
    }
    Ok(out)
}

/// Nearest-pixel cutout of a mask (1 = hole).
pub fn project_mask(mask: &MaskMap, spec: &PatchSpec) -> Result<Array2<f64>> {
    spec.validate()?;
    let mask = if mask.ordering() == Ordering::Ring {
        mask.clone()
    } else {
        mask.to_ring()
    };
    let n_side = mask.n_side();
    Ok(Array2::from_shape_fn(spec.shape(), |(i, j)| {
        let (theta, phi) = spec.pixel_ang(i, j);
        f64::from(mask.values()[healpix::ang2pix(n_side, theta, phi)])
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentOptions {
    pub norm_mode: NormMode,
    pub norm_source: NormSource,
    pub interp: Interp,
}

/// Cut the map and mask into one patch per grid cell. Patches whose mask
/// cutout contains a hole form the test set, the rest the training set; both
/// lists are ordered by patch id.
///
/// Missing sphere pixels become holes (value 0) in their patches.
pub fn segment(
    map: &SphereMap,
    mask: &MaskMap,
    grid: &PatchGrid,
    options: SegmentOptions,
) -> Result<(Vec<Patch>, Vec<Patch>)> {
    if map.n_side() != mask.n_side() {
        return Err(Error::GeometryMismatch(format!(
            "map nside {} vs mask nside {}",
            map.n_side(),
            mask.n_side()
        )));
    }
    if let Some(ns) = grid.n_side.filter(|&ns| ns != map.n_side()) {
        return Err(Error::GeometryMismatch(format!(
            "grid built for nside {ns}, map has nside {}",
            map.n_side()
        )));
    }
    let map = map.to_ring();
    let mask = mask.to_ring();
    let global = match options.norm_source {
        NormSource::GlobalMap => Some(NormalizationRecord::fit(
            options.norm_mode,
            NormSource::GlobalMap,
            (0..map.npix()).filter(|&p| !map.is_bad(p)).map(|p| map.values()[p]),
        )?),
        NormSource::PerPatch => None,
    };
    let patches = grid
        .specs
        .par_iter()
        .map(|spec| {
            let raw = project_patch(&map, spec, options.interp)?;
            let mut hole = project_mask(&mask, spec)?;
            let norm = match global {
                Some(r) => r,
                None => NormalizationRecord::fit(options.norm_mode, NormSource::PerPatch, raw.iter().copied())?,
            };
            let mut image = raw;
            for (v, m) in image.iter_mut().zip(hole.iter_mut()) {
                if v.is_finite() {
                    *v = norm.normalize_value(*v);
                } else {
                    *v = 0.0;
                    *m = 1.0;
                }
            }
            Patch::new(image, hole, *spec, norm)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(patches.into_iter().partition(|p| !p.has_holes()))
}

/// Write inpainted patch pixels back onto a copy of `base`.
///
/// Every flat pixel flagged in a patch's `filled` map (or `mask`, when the
/// patch has not been through inpainting) is denormalized and assigned to the
/// sphere pixel containing its centre; sphere pixels receiving several values
/// get their unweighted mean. All other pixels are copied from `base`.
pub fn reassemble(base: &SphereMap, inpainted: &[Patch], grid: &PatchGrid) -> Result<SphereMap> {
    let base = base.to_ring();
    let n_side = base.n_side();
    let mut acc: HashMap<usize, (f64, u32)> = HashMap::new();
    for patch in inpainted {
        let id = patch.spec.patch_id;
        let spec = grid.get(id).ok_or(Error::UnknownPatch(id))?;
        if *spec != patch.spec {
            return Err(Error::GeometryMismatch(format!("patch {id} does not match its grid cell")));
        }
        patch.validate()?;
        let region = patch.filled.as_ref().unwrap_or(&patch.mask);
        for ((i, j), &m) in region.indexed_iter() {
            if m == 0.0 {
                continue;
            }
            let (theta, phi) = spec.pixel_ang(i, j);
            let p = healpix::ang2pix(n_side, theta, phi);
            let e = acc.entry(p).or_insert((0.0, 0));
            e.0 += patch.norm.denormalize_value(patch.image[(i, j)]);
            e.1 += 1;
        }
    }
    let mut out = base;
    for (p, (sum, n)) in acc {
        out.set(p, sum / f64::from(n))?;
    }
    Ok(out)
}
