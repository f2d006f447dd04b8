//! Seeded synthetic datasets whose class signal is second-order texture
//! inside a small irregular ROI.
//!
//! Every class texture is a two-level pattern with a 50% duty cycle over the
//! same pair of intensities, so class-wise ROI histograms match and only the
//! spatial arrangement differs. Background is flat mid-gray. With
//! probability `distractor_prob` a second blob carrying another class's
//! texture is painted outside the ROI, which leaves the whole image ambiguous
//! while the ROI itself stays informative.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_manifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::folds::stratified_kfold;
use crate::grid::{GridImage, RoiMask};
use crate::volume::{save_image, save_mask};

/// Two-level spatial pattern with a 50% duty cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Texture {
    /// Bands of width `period / 2` with a random axis per sample.
    Stripes { period: usize },
    /// Squares of side `period / 2`.
    Checker { period: usize },
}

impl Texture {
    fn validate(&self) -> Result<()> {
        let (Texture::Stripes { period } | Texture::Checker { period }) = *self;
        if period < 2 || period % 2 != 0 {
            return Err(Error::invalid("texture", format!("period must be even and >= 2, got {period}")));
        }
        Ok(())
    }

    /// Whether `(x, y)` is on the high level, given a per-sample axis flag and
    /// phase.
    fn high(&self, x: usize, y: usize, vertical: bool, phase: usize) -> bool {
        match *self {
            Texture::Stripes { period } => {
                let t = if vertical { x } else { y };
                ((t + phase) / (period / 2)) % 2 == 1
            }
            Texture::Checker { period } => {
                let h = period / 2;
                ((x + phase) / h + (y + phase) / h) % 2 == 1
            }
        }
    }
}

/// Default texture law for class `c`.
fn default_texture(c: usize) -> Texture {
    match c {
        0 => Texture::Stripes { period: 2 },
        1 => Texture::Checker { period: 2 },
        2 => Texture::Stripes { period: 4 },
        _ => Texture::Checker { period: 4 },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub samples: usize,
    pub classes: usize,
    /// Inclusive ROI size range in voxels.
    pub roi_min: usize,
    pub roi_max: usize,
    pub low: f32,
    pub high: f32,
    /// Standard deviation of Gaussian jitter added to every voxel.
    pub jitter: f32,
    pub distractor_prob: f64,
    /// One per class; empty means the built-in laws.
    pub textures: Vec<Texture>,
    pub folds: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self::micro_roi(0)
    }
}

impl SynthSpec {
    /// 64x64 images, two classes, ROIs under 3% of the image area, 500
    /// samples in five folds.
    pub fn micro_roi(seed: u64) -> Self {
        Self {
            width: 64,
            height: 64,
            samples: 500,
            classes: 2,
            roi_min: 40,
            roi_max: 110,
            low: 80.0,
            high: 170.0,
            jitter: 8.0,
            distractor_prob: 0.5,
            textures: Vec::new(),
            folds: 5,
            seed,
        }
    }

    pub fn texture(&self, class: usize) -> Texture {
        self.textures.get(class).copied().unwrap_or_else(|| default_texture(class))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("synthetic spec", reason));
        if self.width == 0 || self.height == 0 {
            return bad("image dims must be positive".into());
        }
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.textures.is_empty() && self.classes > 4 {
            return bad("built-in texture laws cover at most 4 classes; list textures explicitly".into());
        }
        if !self.textures.is_empty() && self.textures.len() != self.classes {
            return bad(format!("{} textures for {} classes", self.textures.len(), self.classes));
        }
        for c in 0..self.classes {
            self.texture(c).validate()?;
        }
        if self.roi_min < 9 || self.roi_min > self.roi_max {
            return bad(format!("ROI size range {}..={} must start at >= 9", self.roi_min, self.roi_max));
        }
        let side = blob_margin(self.roi_max) * 2 + 1;
        if side > self.width || side > self.height || 4 * self.roi_max > self.width * self.height {
            return bad(format!("ROI of up to {} voxels does not fit a {}x{} image", self.roi_max, self.width, self.height));
        }
        if !(self.low.is_finite() && self.high.is_finite() && self.low < self.high) {
            return bad("need finite low < high".into());
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return bad("jitter must be finite and non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.distractor_prob) {
            return bad("distractor_prob must lie in [0, 1]".into());
        }
        if self.folds < 2 || self.samples < self.folds * self.classes {
            return bad(format!("{} samples cannot fill {} folds per class", self.samples, self.folds));
        }
        Ok(())
    }

    /// Labels are dealt round-robin so classes are balanced.
    pub fn labels(&self) -> Vec<usize> {
        (0..self.samples).map(|i| i % self.classes).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub image: GridImage,
    pub mask: RoiMask,
    pub label: usize,
}

/// Upper bound on how far a grown blob reaches from its seed voxel.
fn blob_margin(size: usize) -> usize {
    ((size as f64).sqrt().ceil() as usize).max(3) + 1
}

/// Grows a 4-connected blob of exactly `size` voxels from `seed` by random
/// frontier accretion, staying within `blob_margin(size)` of the seed.
fn grow_blob(rng: &mut ChaCha8Rng, w: usize, h: usize, seed: (usize, usize), size: usize) -> Vec<(usize, usize)> {
    let r = blob_margin(size) as isize;
    let mut queued = vec![false; w * h];
    let mut blob = Vec::with_capacity(size);
    let mut frontier = vec![seed];
    queued[seed.1 * w + seed.0] = true;
    while blob.len() < size && !frontier.is_empty() {
        let (x, y) = frontier.swap_remove(rng.random_range(0..frontier.len()));
        blob.push((x, y));
        for (dx, dy) in [(1isize, 0isize), (-1, 0), (0, 1), (0, -1)] {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            if (nx - seed.0 as isize).abs() > r || (ny - seed.1 as isize).abs() > r {
                continue;
            }
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            let k = ny as usize * w + nx as usize;
            if !queued[k] {
                queued[k] = true;
                frontier.push((nx as usize, ny as usize));
            }
        }
    }
    blob
}

fn random_center(rng: &mut ChaCha8Rng, w: usize, h: usize, size: usize) -> (usize, usize) {
    let m = blob_margin(size);
    (rng.random_range(m..w - m), rng.random_range(m..h - m))
}

/// Generates sample `index` of `spec`. Each sample has its own RNG stream, so
/// the result does not depend on generation order.
pub fn generate_sample(spec: &SynthSpec, index: usize) -> Result<SynthSample> {
    spec.validate()?;
    let label = index % spec.classes;
    let (w, h) = (spec.width, spec.height);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64 + 1);
    let jitter = Normal::new(0.0f32, spec.jitter).expect("validated jitter");
    let level = |hi: bool| if hi { spec.high } else { spec.low };

    let mut base = vec![(spec.low + spec.high) / 2.0; w * h];

    let roi_size = rng.random_range(spec.roi_min..=spec.roi_max);
    let center = random_center(&mut rng, w, h, roi_size);
    let roi = grow_blob(&mut rng, w, h, center, roi_size);
    let mut mask = RoiMask::empty([w, h, 1]);
    for &(x, y) in &roi {
        mask.set(x, y, 0, true);
    }
    let mut paint = |rng: &mut ChaCha8Rng, texture: Texture, voxels: &[(usize, usize)]| {
        let vertical = rng.random_bool(0.5);
        let (Texture::Stripes { period } | Texture::Checker { period }) = texture;
        let phase = rng.random_range(0..period);
        for &(x, y) in voxels {
            base[y * w + x] = level(texture.high(x, y, vertical, phase));
        }
    };
    paint(&mut rng, spec.texture(label), &roi);

    if rng.random_bool(spec.distractor_prob) {
        let other = (label + rng.random_range(1..spec.classes)) % spec.classes;
        let size = rng.random_range(spec.roi_min..=spec.roi_max);
        // keep a one-voxel gap between the distractor and the ROI
        let near_roi = |x: usize, y: usize| {
            let (lx, hx) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let (ly, hy) = (y.saturating_sub(1), (y + 1).min(h - 1));
            (ly..=hy).any(|yy| (lx..=hx).any(|xx| mask.get(xx, yy, 0)))
        };
        for _ in 0..64 {
            let center = random_center(&mut rng, w, h, size);
            let blob = grow_blob(&mut rng, w, h, center, size);
            if blob.iter().all(|&(x, y)| !near_roi(x, y)) {
                paint(&mut rng, spec.texture(other), &blob);
                break;
            }
        }
    }

    let values = base.into_iter().map(|v| (v + jitter.sample(&mut rng)).clamp(0.0, 255.0)).collect();
    Ok(SynthSample { image: GridImage::from_2d(w, h, values)?, mask, label })
}

/// All samples of `spec`, generated in parallel and returned in index order.
pub fn generate_samples(spec: &SynthSpec) -> Result<Vec<SynthSample>> {
    spec.validate()?;
    (0..spec.samples).into_par_iter().map(|i| generate_sample(spec, i)).collect()
}

/// Writes `images/<id>.grd`, `masks/<id>.msk`, `manifest.csv` and `spec.json`
/// under `out_dir` and returns the manifest entries.
pub fn generate_dataset(spec: &SynthSpec, out_dir: &Path) -> Result<Vec<ManifestEntry>> {
    spec.validate()?;
    let labels = spec.labels();
    let folds = stratified_kfold(&labels, spec.folds, spec.seed)?;
    for sub in ["images", "masks"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let entries = (0..spec.samples)
        .into_par_iter()
        .map(|i| {
            let s = generate_sample(spec, i)?;
            let id = format!("s{i:05}");
            let image_path = format!("images/{id}.grd");
            let mask_path = format!("masks/{id}.msk");
            save_image(out_dir.join(&image_path), &s.image)?;
            save_mask(out_dir.join(&mask_path), &s.mask, s.image.spacing())?;
            Ok(ManifestEntry { id, image_path: image_path.into(), mask_path: mask_path.into(), label: s.label, fold: folds[i] })
        })
        .collect::<Result<Vec<_>>>()?;
    write_manifest(&out_dir.join("manifest.csv"), &entries)?;
    let spec_path = out_dir.join("spec.json");
    let json = serde_json::to_string_pretty(spec).map_err(|e| Error::Json { path: spec_path.clone(), source: e })?;
    fs::write(&spec_path, json).map_err(|e| Error::io(&spec_path, e))?;
    Ok(entries)
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return if a.is_empty() && b.is_empty() { 0.0 } else { 1.0 };
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// ROI voxel values of every sample of `class`, pooled.
pub fn roi_values(samples: &[SynthSample], class: usize) -> Vec<f64> {
    samples
        .iter()
        .filter(|s| s.label == class)
        .flat_map(|s| s.image.values().iter().zip(s.mask.bits()).filter(|(_, &m)| m).map(|(&v, _)| v as f64))
        .collect()
}
