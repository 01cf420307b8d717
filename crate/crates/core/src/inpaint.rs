//! Hole filling, per-pixel uncertainty from repeated latent draws, and
//! full-sky assembly.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;
use crate::sphere_data::{reassemble, segment, write_array, read_array, MaskMap, Patch, PatchGrid, SegmentOptions, SphereMap};
use crate::vae::{reparameterize, standard_normal, VaeModel};

pub const DEFAULT_UQ_SAMPLES: usize = 100;

/// `(1 - M) * x + M * y_hat`. Pixels with `M = 0` are copied from `x`
/// unchanged.
pub fn composite(image: &Array2<f64>, mask: &Array2<f64>, output: &Array2<f64>) -> Array2<f64> {
    Zip::from(image)
        .and(mask)
        .and(output)
        .map_collect(|&x, &m, &y| if m == 0.0 { x } else { y })
}

fn check_shape(model: &VaeModel, patch: &Patch) -> Result<()> {
    let hw = model.config().input_hw;
    if patch.image.dim() != hw {
        return Err(Error::Shape(format!(
            "patch {} is {:?}, model expects {hw:?}",
            patch.spec.patch_id,
            patch.image.dim()
        )));
    }
    Ok(())
}

fn filled_patch(patch: &Patch, image: Array2<f64>) -> Patch {
    Patch {
        image,
        mask: Array2::zeros(patch.mask.dim()),
        spec: patch.spec,
        norm: patch.norm,
        filled: Some(patch.mask.clone()),
    }
}

/// Latent noise used by [`inpaint_patch`] for `patch_id` under `noise_seed`.
pub fn inpaint_noise(noise_seed: u64, patch_id: usize, latent_dim: usize) -> Vec<f64> {
    standard_normal(&mut seeding::stream(noise_seed, "inpaint-noise", patch_id as u64), latent_dim)
}

/// Fill the holes of `patch` with the network output. The returned patch
/// has an all-zero mask and records the filled region in `filled`.
pub fn inpaint_patch(model: &VaeModel, patch: &Patch, noise_seed: u64) -> Result<Patch> {
    check_shape(model, patch)?;
    if !patch.has_holes() {
        return Ok(filled_patch(patch, patch.image.clone()));
    }
    let noise = inpaint_noise(noise_seed, patch.spec.patch_id, model.config().latent_dim);
    let (out, _) = model.forward(patch, &noise)?;
    Ok(filled_patch(patch, composite(&patch.image, &patch.mask, &out)))
}

/// Fill holes with the mean of the patch's valid pixels.
pub fn mean_fill(patch: &Patch) -> Result<Patch> {
    let (sum, n) = patch
        .image
        .iter()
        .zip(&patch.mask)
        .filter(|(_, &m)| m == 0.0)
        .fold((0.0, 0usize), |(s, n), (&v, _)| (s + v, n + 1));
    if n == 0 {
        return Err(Error::Config(format!("patch {} has no valid pixels", patch.spec.patch_id)));
    }
    let fill = Array2::from_elem(patch.image.dim(), sum / n as f64);
    Ok(filled_patch(patch, composite(&patch.image, &patch.mask, &fill)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct UQResult {
    pub patch_id: usize,
    pub mean_image: Array2<f64>,
    /// Population standard deviation over the draws.
    pub std_image: Array2<f64>,
    pub n_samples: usize,
    pub seed: u64,
}

/// Running per-pixel mean and sum of squared deviations.
struct Welford {
    n: usize,
    mean: Array2<f64>,
    m2: Array2<f64>,
}

impl Welford {
    fn new(dim: (usize, usize)) -> Self {
        Self {
            n: 0,
            mean: Array2::zeros(dim),
            m2: Array2::zeros(dim),
        }
    }

    fn push(&mut self, x: &Array2<f64>) {
        self.n += 1;
        let k = self.n as f64;
        Zip::from(&mut self.mean).and(&mut self.m2).and(x).for_each(|mu, m2, &v| {
            let d = v - *mu;
            *mu += d / k;
            *m2 += d * (v - *mu);
        });
    }

    fn finish(self) -> (Array2<f64>, Array2<f64>) {
        let n = self.n as f64;
        (self.mean, self.m2.mapv(|v| (v / n).max(0.0).sqrt()))
    }
}

fn check_samples(n_samples: usize) -> Result<()> {
    if n_samples < 2 {
        return Err(Error::Config(format!("uncertainty needs at least 2 samples, got {n_samples}")));
    }
    Ok(())
}

/// Mean and standard deviation of the composited output over `n_samples`
/// latent draws. Draw `k` uses noise stream `k` of `seed`, so the result
/// depends only on the model, the patch and the seed.
pub fn quantify_uncertainty(model: &VaeModel, patch: &Patch, n_samples: usize, seed: u64) -> Result<UQResult> {
    check_samples(n_samples)?;
    check_shape(model, patch)?;
    let d = model.config().latent_dim;
    let mut acc = Welford::new(patch.image.dim());
    if patch.has_holes() {
        let (dist, skips) = model.encode(&patch.image, &patch.mask)?;
        for k in 0..n_samples {
            let noise = standard_normal(&mut seeding::stream(seed, "uq-noise", k as u64), d);
            let out = model.decode(&reparameterize(&dist, &noise)?, &skips)?;
            acc.push(&composite(&patch.image, &patch.mask, &out));
        }
    } else {
        for _ in 0..n_samples {
            acc.push(&patch.image);
        }
    }
    let (mean_image, std_image) = acc.finish();
    Ok(UQResult {
        patch_id: patch.spec.patch_id,
        mean_image,
        std_image,
        n_samples,
        seed,
    })
}

/// Spread over independently trained models instead of latent draws: each
/// model fills the patch once with the noise of [`inpaint_patch`].
pub fn ensemble_uncertainty(models: &[VaeModel], patch: &Patch, seed: u64) -> Result<UQResult> {
    check_samples(models.len())?;
    let mut acc = Welford::new(patch.image.dim());
    for m in models {
        acc.push(&inpaint_patch(m, patch, seed)?.image);
    }
    let (mean_image, std_image) = acc.finish();
    Ok(UQResult {
        patch_id: patch.spec.patch_id,
        mean_image,
        std_image,
        n_samples: models.len(),
        seed,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UqManifestEntry {
    pub patch_id: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub mean: String,
    pub std: String,
}

pub const UQ_MANIFEST: &str = "uq_manifest.json";

/// Write each result as `patch_NNNNN_mean.npy` / `patch_NNNNN_std.npy` plus
/// `uq_manifest.json`.
pub fn save_uq(dir: impl AsRef<Path>, results: &[UQResult]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(results.len());
    for r in results {
        let mean = format!("patch_{:05}_mean.npy", r.patch_id);
        let std = format!("patch_{:05}_std.npy", r.patch_id);
        write_array(&dir.join(&mean), &r.mean_image)?;
        write_array(&dir.join(&std), &r.std_image)?;
        entries.push(UqManifestEntry {
            patch_id: r.patch_id,
            n_samples: r.n_samples,
            seed: r.seed,
            mean,
            std,
        });
    }
    let path = dir.join(UQ_MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&entries)?).map_err(|e| Error::io(&path, e))
}

pub fn load_uq(dir: impl AsRef<Path>) -> Result<Vec<UQResult>> {
    let dir = dir.as_ref();
    let path = dir.join(UQ_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let entries: Vec<UqManifestEntry> = serde_json::from_str(&text)?;
    entries
        .into_iter()
        .map(|e| {
            Ok(UQResult {
                patch_id: e.patch_id,
                mean_image: read_array(&dir.join(&e.mean))?,
                std_image: read_array(&dir.join(&e.std))?,
                n_samples: e.n_samples,
                seed: e.seed,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkyOptions {
    pub segment: SegmentOptions,
    pub noise_seed: u64,
    /// Latent draws per test patch for uncertainty maps; `None` skips them.
    pub uq_samples: Option<usize>,
}

impl Default for SkyOptions {
    fn default() -> Self {
        Self {
            segment: SegmentOptions::default(),
            noise_seed: 0,
            uq_samples: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SkyResult {
    pub map: SphereMap,
    pub patches: Vec<Patch>,
    pub uq: Vec<UQResult>,
}

/// Segment `base` under `mask`, inpaint every patch that contains holes and
/// write the results back. Pixels outside the holes keep their values.
pub fn inpaint_sky(model: &VaeModel, base: &SphereMap, mask: &MaskMap, grid: &PatchGrid, options: &SkyOptions) -> Result<SkyResult> {
    let (_, test) = segment(base, mask, grid, options.segment)?;
    let patches = test
        .iter()
        .map(|p| inpaint_patch(model, p, options.noise_seed))
        .collect::<Result<Vec<_>>>()?;
    let uq = match options.uq_samples {
        Some(n) => test
            .iter()
            .map(|p| quantify_uncertainty(model, p, n, options.noise_seed))
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    let map = reassemble(base, &patches, grid)?;
    Ok(SkyResult { map, patches, uq })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grf::{analyze, estimate_spectrum, sample_alm, synthesize, PowerSpectrum};
    use crate::sphere_data::{make_grid, synthetic::galactic_mask, NormalizationRecord, PatchSpec};
    use crate::vae::ModelConfig;
    use rand::Rng;

    fn toy_model() -> VaeModel {
        VaeModel::init(ModelConfig {
            input_hw: (8, 8),
            encoder_widths: vec![4, 4],
            decoder_widths: vec![4, 4],
            fc_layers: 1,
            latent_dim: 4,
            seed: 2,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    fn patch(mask: Array2<f64>, seed: u64) -> Patch {
        let mut rng = seeding::rng_from_seed(seed);
        let img = Array2::from_shape_fn((8, 8), |_| rng.random::<f64>());
        Patch::new(
            img,
            mask,
            PatchSpec {
                height_px: 8,
                width_px: 8,
                ..PatchSpec::default()
            },
            NormalizationRecord::identity(),
        )
        .unwrap()
    }

    fn random_mask(seed: u64) -> Array2<f64> {
        let mut rng = seeding::rng_from_seed(seed);
        Array2::from_shape_fn((8, 8), |_| f64::from(rng.random_bool(0.3) as u8))
    }

    #[test]
    fn compositing_cases() {
        let m = toy_model();
        let empty = patch(Array2::zeros((8, 8)), 1);
        let out = inpaint_patch(&m, &empty, 0).unwrap();
        assert_eq!(out.image, empty.image);
        assert!(out.mask.iter().all(|&v| v == 0.0));

        let full = patch(Array2::ones((8, 8)), 1);
        let out = inpaint_patch(&m, &full, 5).unwrap();
        let (net, _) = m.forward(&full, &inpaint_noise(5, 0, 4)).unwrap();
        assert_eq!(out.image, net);
        assert_eq!(out.filled.as_ref(), Some(&full.mask));

        for s in 0..10 {
            let p = patch(random_mask(s), s + 100);
            let out = inpaint_patch(&m, &p, s).unwrap();
            for ((a, b), &h) in out.image.iter().zip(&p.image).zip(&p.mask) {
                if h == 0.0 {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let m = toy_model();
        let p = Patch::new(
            Array2::zeros((4, 4)),
            Array2::zeros((4, 4)),
            PatchSpec {
                height_px: 4,
                width_px: 4,
                ..PatchSpec::default()
            },
            NormalizationRecord::identity(),
        )
        .unwrap();
        assert_eq!(inpaint_patch(&m, &p, 0).unwrap_err().code(), "shape");
    }

    #[test]
    fn mean_fill_uses_valid_pixels() {
        let mut mask = Array2::zeros((8, 8));
        mask[(0, 0)] = 1.0;
        let mut p = patch(mask, 3);
        p.image.fill(2.0);
        p.image[(0, 0)] = 100.0;
        assert_eq!(mean_fill(&p).unwrap().image[(0, 0)], 2.0);
        assert!(mean_fill(&patch(Array2::ones((8, 8)), 1)).is_err());
    }

    #[test]
    fn uncertainty_contract() {
        let m = toy_model();
        let p = patch(random_mask(7), 8);
        let a = quantify_uncertainty(&m, &p, 20, 3).unwrap();
        assert_eq!(a, quantify_uncertainty(&m, &p, 20, 3).unwrap());
        for ((&s, &h), (&mu, &x)) in a.std_image.iter().zip(&p.mask).zip(a.mean_image.iter().zip(&p.image)) {
            assert!(s >= 0.0);
            if h == 0.0 {
                assert_eq!(s, 0.0);
                assert_eq!(mu, x);
            }
        }
        assert!(a.std_image.iter().any(|&s| s > 0.0));
        let clean = quantify_uncertainty(&m, &patch(Array2::zeros((8, 8)), 1), 5, 0).unwrap();
        assert!(clean.std_image.iter().all(|&s| s == 0.0));
        assert_eq!(quantify_uncertainty(&m, &p, 1, 0).unwrap_err().code(), "config");
    }

    #[test]
    fn population_std_matches_two_pass_oracle() {
        let m = toy_model();
        let p = patch(Array2::ones((8, 8)), 9);
        let n = 7;
        let r = quantify_uncertainty(&m, &p, n, 4).unwrap();
        let (dist, skips) = m.encode(&p.image, &p.mask).unwrap();
        let outs: Vec<Array2<f64>> = (0..n)
            .map(|k| {
                let noise = standard_normal(&mut seeding::stream(4, "uq-noise", k as u64), 4);
                m.decode(&reparameterize(&dist, &noise).unwrap(), &skips).unwrap()
            })
            .collect();
        for ((i, j), &s) in r.std_image.indexed_iter() {
            let mean = outs.iter().map(|o| o[(i, j)]).sum::<f64>() / n as f64;
            let var = outs.iter().map(|o| (o[(i, j)] - mean).powi(2)).sum::<f64>() / n as f64;
            assert!((r.mean_image[(i, j)] - mean).abs() < 1e-14);
            assert!((s - var.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn collapsed_posterior_has_tiny_spread() {
        let mut m = toy_model();
        m.collapse_posterior();
        let p = patch(random_mask(2), 4);
        let r = quantify_uncertainty(&m, &p, 100, 1).unwrap();
        let max = r.std_image.iter().cloned().fold(0.0, f64::max);
        assert!(max < 1e-3, "{max}");
    }

    #[test]
    fn mean_converges_with_more_draws() {
        let m = toy_model();
        let p = patch(random_mask(11), 12);
        let a = quantify_uncertainty(&m, &p, 100, 21).unwrap();
        let b = quantify_uncertainty(&m, &p, 400, 22).unwrap();
        for ((&ma, &mb), (&sa, &sb)) in a.mean_image.iter().zip(&b.mean_image).zip(a.std_image.iter().zip(&b.std_image)) {
            let se = (sa * sa / 100.0 + sb * sb / 400.0).sqrt();
            assert!((ma - mb).abs() <= 4.0 * se + 1e-15, "{ma} {mb} {se}");
        }
    }

    #[test]
    fn ensemble_spread() {
        let models: Vec<VaeModel> = (0..3)
            .map(|s| {
                VaeModel::init(ModelConfig {
                    seed: s,
                    ..toy_model().config().clone()
                })
                .unwrap()
            })
            .collect();
        let p = patch(random_mask(3), 3);
        let r = ensemble_uncertainty(&models, &p, 0).unwrap();
        assert_eq!(r.n_samples, 3);
        assert!(r.std_image.iter().zip(&p.mask).all(|(&s, &h)| h == 1.0 || s == 0.0));
        assert!(ensemble_uncertainty(&models[..1], &p, 0).is_err());
    }

    #[test]
    fn uq_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = toy_model();
        let rs: Vec<UQResult> = (0..2)
            .map(|s| {
                let mut p = patch(random_mask(s), s);
                p.spec.patch_id = s as usize;
                quantify_uncertainty(&m, &p, 3, s).unwrap()
            })
            .collect();
        save_uq(dir.path(), &rs).unwrap();
        assert_eq!(load_uq(dir.path()).unwrap(), rs);
    }

    fn sky() -> (SphereMap, PatchGrid, PowerSpectrum) {
        let cl = PowerSpectrum::from_fn(16, |l| 1000.0 / ((l * (l + 1)) as f64 + 1.0)).unwrap();
        let map = synthesize(&sample_alm(&cl, 3), 16, None).unwrap();
        let t = PatchSpec {
            height_px: 8,
            width_px: 8,
            ..PatchSpec::default()
        };
        (map, make_grid(10.0, 20.0, &t).unwrap(), cl)
    }

    #[test]
    fn empty_sky_mask_is_identity() {
        let (map, grid, _) = sky();
        let r = inpaint_sky(&toy_model(), &map, &MaskMap::empty(16).unwrap(), &grid, &SkyOptions::default()).unwrap();
        assert_eq!(r.map, map);
        assert!(r.patches.is_empty());
    }

    #[test]
    fn small_holes_keep_the_low_multipoles() {
        let (map, grid, cl) = sky();
        let mask = galactic_mask(16, 0.0, 6, 4.0, 5).unwrap();
        let opts = SkyOptions {
            uq_samples: Some(2),
            ..SkyOptions::default()
        };
        let r = inpaint_sky(&toy_model(), &map, &mask, &grid, &opts).unwrap();
        assert!(!r.patches.is_empty());
        assert_eq!(r.uq.len(), r.patches.len());
        for p in 0..map.npix() {
            if !mask.is_hole(p) {
                assert_eq!(r.map.values()[p].to_bits(), map.values()[p].to_bits());
            }
        }
        let est = estimate_spectrum(&analyze(&r.map, 8).unwrap());
        for l in 2..=8 {
            let sigma = (2.0 / (2 * l + 1) as f64).sqrt() * cl.get(l);
            assert!((est.get(l) - cl.get(l)).abs() < 5.0 * sigma, "l = {l}");
        }
    }
}
