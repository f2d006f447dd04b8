//! Manifest CSV and conversion of image/mask pairs into network samples.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glcm::{glcm_image, GlcmImage, GlcmOptions, Regime};
use crate::grid::{GridImage, QuantizationSpec, RoiMask};
use crate::nn::{Sample, Tensor};
use crate::volume::{load_mask, load_volume};

/// One manifest row. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    pub label: usize,
    pub fold: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    /// Directory the entry paths are resolved against.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn labels(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn folds(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.fold).collect()
    }

    pub fn classes(&self) -> usize {
        self.entries.iter().map(|e| e.label + 1).max().unwrap_or(0)
    }

    pub fn image_path(&self, e: &ManifestEntry) -> PathBuf {
        self.root.join(&e.image_path)
    }

    pub fn mask_path(&self, e: &ManifestEntry) -> PathBuf {
        self.root.join(&e.mask_path)
    }

    /// Checks labels and folds against `classes` and `k`, and that every
    /// referenced file exists.
    pub fn validate(&self, classes: usize, k: Option<usize>) -> Result<()> {
        for e in &self.entries {
            if e.label >= classes {
                return Err(Error::LabelOutOfRange { label: e.label, classes });
            }
            if let Some(k) = k {
                if e.fold >= k {
                    return Err(Error::invalid("manifest", format!("{}: fold {} not below {k}", e.id, e.fold)));
                }
            }
            for p in [self.image_path(e), self.mask_path(e)] {
                if !p.is_file() {
                    return Err(Error::io(&p, std::io::Error::from(std::io::ErrorKind::NotFound)));
                }
            }
        }
        Ok(())
    }
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let csv_err = |e| Error::Csv { path: path.into(), source: e };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for e in entries {
        w.serialize(e).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let csv_err = |e| Error::Csv { path: path.into(), source: e };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().collect::<Vec<_>>() != ["id", "image_path", "mask_path", "label", "fold"] {
        return Err(Error::Header { path: path.into(), reason: format!("unexpected columns {:?}", header) });
    }
    let entries = r.deserialize().collect::<std::result::Result<Vec<ManifestEntry>, _>>().map_err(csv_err)?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Manifest { root, entries })
}

/// How image/mask pairs become network inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct PrepareOptions {
    pub quantization: QuantizationSpec,
    pub glcm: GlcmOptions,
    /// `None` picks the regime from the image geometry.
    pub regime: Option<Regime>,
}


impl PrepareOptions {
    pub fn glcm_image(&self, image: &GridImage, mask: &RoiMask) -> Result<GlcmImage> {
        let regime = self.regime.unwrap_or_else(|| Regime::for_image(image));
        glcm_image(image, mask, &self.quantization, regime, &self.glcm)
    }
}

/// Image voxels mapped to `[0, 1]` through the quantization range, shaped
/// `(C * Z, Y, X)`.
pub fn image_tensor(image: &GridImage, spec: &QuantizationSpec) -> Tensor<f32> {
    let [x, y, z] = image.dims();
    Tensor::new(
        vec![image.channels() * z, y, x],
        image.values().iter().map(|&v| spec.unit(v as f64) as f32).collect(),
    )
    .expect("voxel count matches dims")
}

/// GLCM image values times `L^2`, so a uniform matrix has unit entries.
pub fn glcm_tensor(glcm: &GlcmImage) -> Tensor<f32> {
    let l = glcm.levels();
    let scale = (l * l) as f64;
    Tensor::new(vec![glcm.channels(), l, l], glcm.values().iter().map(|&v| (v * scale) as f32).collect())
        .expect("GLCM image is C x L x L")
}

pub fn prepare_sample(image: &GridImage, mask: &RoiMask, label: usize, opts: &PrepareOptions) -> Result<Sample<f32>> {
    let glcm = opts.glcm_image(image, mask)?;
    Ok(Sample { image: image_tensor(image, &opts.quantization), glcm: Some(glcm_tensor(&glcm)), label })
}

/// Loads and prepares every manifest entry, in manifest order.
pub fn load_samples(manifest: &Manifest, opts: &PrepareOptions) -> Result<Vec<Sample<f32>>> {
    manifest
        .entries
        .par_iter()
        .map(|e| {
            let image = load_volume(manifest.image_path(e))?;
            let mask = load_mask(manifest.mask_path(e))?;
            prepare_sample(&image, &mask, e.label, opts)
        })
        .collect()
}
