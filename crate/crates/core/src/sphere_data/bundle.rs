//! Patch bundles on disk: a directory holding one `.npy` file per patch image
//! and mask plus `manifest.json` with the grid, each patch's spec and its
//! normalization record.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use ndarray_npy::{read_npy, write_npy};
use serde::{Deserialize, Serialize};

use super::patch::{NormalizationRecord, Patch, PatchGrid, PatchSpec};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub split: Split,
    pub spec: PatchSpec,
    pub norm: NormalizationRecord,
    pub image: String,
    pub mask: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filled: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub grid: PatchGrid,
    pub patches: Vec<ManifestEntry>,
}

#[derive(Debug, Clone)]
pub struct Bundle {
    pub grid: PatchGrid,
    pub train: Vec<Patch>,
    pub test: Vec<Patch>,
}

pub(crate) fn write_array(path: &Path, a: &Array2<f64>) -> Result<()> {
    write_npy(path, a).map_err(|e| Error::ArrayFile(format!("{}: {e}", path.display())))
}

pub(crate) fn read_array(path: &Path) -> Result<Array2<f64>> {
    read_npy(path).map_err(|e| Error::ArrayFile(format!("{}: {e}", path.display())))
}

pub fn save_bundle(dir: impl AsRef<Path>, grid: &PatchGrid, train: &[Patch], test: &[Patch]) -> Result<()> {
    let dir = dir.as_ref();
    let mut entries = Vec::with_capacity(train.len() + test.len());
    for (split, patches) in [(Split::Train, train), (Split::Test, test)] {
        let name = match split {
            Split::Train => "train",
            Split::Test => "test",
        };
        let sub = dir.join(name);
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        for p in patches {
            let stem = format!("{name}/patch_{:05}", p.spec.patch_id);
            let image = format!("{stem}_image.npy");
            let mask = format!("{stem}_mask.npy");
            write_array(&dir.join(&image), &p.image)?;
            write_array(&dir.join(&mask), &p.mask)?;
            let filled = match &p.filled {
                Some(f) => {
                    let name = format!("{stem}_filled.npy");
                    write_array(&dir.join(&name), f)?;
                    Some(name)
                }
                None => None,
            };
            entries.push(ManifestEntry {
                split,
                spec: p.spec,
                norm: p.norm,
                image,
                mask,
                filled,
            });
        }
    }
    let manifest = Manifest {
        format: "cosmovae-patch-bundle-v1".into(),
        grid: grid.clone(),
        patches: entries,
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

pub fn load_bundle(dir: impl AsRef<Path>) -> Result<Bundle> {
    let dir = dir.as_ref();
    let path: PathBuf = dir.join(MANIFEST);
    let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_slice(&text)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for e in &manifest.patches {
        let mut p = Patch::new(
            read_array(&dir.join(&e.image))?,
            read_array(&dir.join(&e.mask))?,
            e.spec,
            e.norm,
        )?;
        if let Some(f) = &e.filled {
            p.filled = Some(read_array(&dir.join(f))?);
        }
        match e.split {
            Split::Train => train.push(p),
            Split::Test => test.push(p),
        }
    }
    Ok(Bundle {
        grid: manifest.grid,
        train,
        test,
    })
}
