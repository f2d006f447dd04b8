//! Co-occurrence accumulation restricted to a region of interest, and the
//! fixed-size GLCM image built from it.
//!
//! Four construction regimes are supported:
//!
//! * [`Regime::Planar`]: 2D image, mean of the four in-plane direction GLCMs.
//! * [`Regime::Isotropic`]: 3D image with near-uniform spacing, mean of the
//!   13 volumetric direction GLCMs.
//! * [`Regime::Anisotropic`]: 3D image with coarse z spacing, in-plane
//!   direction GLCMs summed over every slice. No pair crosses slices.
//! * Multi-channel images apply one of the above per channel and stack the
//!   results.
//!
//! A pair is admissible only when both voxels lie inside the mask. Counts are
//! combined as integers and normalized once at the end, so results do not
//! depend on the order in which directions or channels are processed.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{mask_bounding_box, quantize, validate_pair, BoundingBox, GridImage, QuantizationSpec, QuantizedGrid, RoiMask};
use crate::volume;

/// Voxel displacement `(dz, dy, dx)` with components in `{-1, 0, 1}`.
///
/// Offsets are kept in canonical form: the first nonzero component in
/// z, y, x order is positive, so each antiparallel pair has one
/// representative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Offset {
    pub dz: i8,
    pub dy: i8,
    pub dx: i8,
}

impl Offset {
    pub fn new(dz: i8, dy: i8, dx: i8) -> Result<Self> {
        let o = Self { dz, dy, dx };
        if [dz, dy, dx].iter().any(|c| !(-1..=1).contains(c)) || (dz, dy, dx) == (0, 0, 0) {
            return Err(Error::invalid("offset", format!("{o} must have components in {{-1,0,1}}, not all zero")));
        }
        if !o.is_canonical() {
            return Err(Error::invalid("offset", format!("{o} is not canonical; use {}", o.negated())));
        }
        Ok(o)
    }

    pub fn is_canonical(&self) -> bool {
        [self.dz, self.dy, self.dx].into_iter().find(|&c| c != 0).is_some_and(|c| c > 0)
    }

    pub fn negated(&self) -> Self {
        Self { dz: -self.dz, dy: -self.dy, dx: -self.dx }
    }

    pub fn is_planar(&self) -> bool {
        self.dz == 0
    }

    /// Displacement in voxels, `[dx, dy, dz]` (grid axis order).
    pub fn scaled(&self, distance: usize) -> [isize; 3] {
        let d = distance as isize;
        [self.dx as isize * d, self.dy as isize * d, self.dz as isize * d]
    }
}

impl fmt::Display for Offset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.dz, self.dy, self.dx)
    }
}

/// Ordered set of canonical offsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectionSet(Vec<Offset>);

impl DirectionSet {
    pub fn new(offsets: Vec<Offset>) -> Result<Self> {
        for (i, o) in offsets.iter().enumerate() {
            if !o.is_canonical() {
                return Err(Error::invalid("direction set", format!("{o} is not canonical")));
            }
            if offsets[..i].contains(o) {
                return Err(Error::invalid("direction set", format!("duplicate offset {o}")));
            }
        }
        Ok(Self(offsets))
    }

    pub fn offsets(&self) -> &[Offset] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// The in-plane directions 0°, 45°, 90°, 135° in that order, as `(dy, dx)`:
/// `(0,1)`, `(1,1)`, `(1,0)`, `(1,-1)`.
pub fn directions_2d() -> DirectionSet {
    DirectionSet(vec![
        Offset { dz: 0, dy: 0, dx: 1 },
        Offset { dz: 0, dy: 1, dx: 1 },
        Offset { dz: 0, dy: 1, dx: 0 },
        Offset { dz: 0, dy: 1, dx: -1 },
    ])
}

/// The 13 canonical neighbours of the 26-neighbourhood, in lexicographic
/// `(dz, dy, dx)` order.
pub fn directions_3d() -> DirectionSet {
    let mut out = Vec::with_capacity(13);
    for dz in -1..=1 {
        for dy in -1..=1 {
            for dx in -1..=1 {
                let o = Offset { dz, dy, dx };
                if (dz, dy, dx) != (0, 0, 0) && o.is_canonical() {
                    out.push(o);
                }
            }
        }
    }
    DirectionSet(out)
}

/// Co-occurrence counts for one direction, row = reference level,
/// column = neighbour level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Glcm {
    levels: usize,
    counts: Vec<u64>,
    symmetric: bool,
}

impl Glcm {
    pub fn zeros(levels: usize, symmetric: bool) -> Self {
        Self { levels, counts: vec![0; levels * levels], symmetric }
    }

    pub fn from_counts(levels: usize, counts: Vec<u64>, symmetric: bool) -> Result<Self> {
        if counts.len() != levels * levels {
            return Err(Error::ShapeMismatch {
                context: "glcm counts",
                expected: vec![levels, levels],
                actual: vec![counts.len()],
            });
        }
        Ok(Self { levels, counts, symmetric })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.levels + j]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn transpose(&self) -> Self {
        let l = self.levels;
        let mut counts = vec![0; l * l];
        for i in 0..l {
            for j in 0..l {
                counts[j * l + i] = self.counts[i * l + j];
            }
        }
        Self { levels: l, counts, symmetric: self.symmetric }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    Probability,
    Raw,
    Log1p,
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "probability" => Ok(Self::Probability),
            "raw" => Ok(Self::Raw),
            "log1p" => Ok(Self::Log1p),
            other => Err(Error::invalid("normalization", format!("unknown mode {other:?}"))),
        }
    }
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Probability => "probability",
            Self::Raw => "raw",
            Self::Log1p => "log1p",
        })
    }
}

/// Construction regime for a single channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// 2D image, mean over [`directions_2d`].
    #[serde(rename = "2d")]
    Planar,
    /// 3D image, mean over [`directions_3d`].
    #[serde(rename = "3d-iso")]
    Isotropic,
    /// 3D image, in-plane directions summed slice by slice.
    #[serde(rename = "3d-aniso")]
    Anisotropic,
}

impl Regime {
    pub fn directions(&self) -> DirectionSet {
        match self {
            Regime::Planar | Regime::Anisotropic => directions_2d(),
            Regime::Isotropic => directions_3d(),
        }
    }

    /// Default regime for an image's shape.
    pub fn for_image(image: &GridImage) -> Self {
        if image.is_2d() {
            Regime::Planar
        } else {
            Regime::Anisotropic
        }
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2d" => Ok(Self::Planar),
            "3d-iso" => Ok(Self::Isotropic),
            "3d-aniso" => Ok(Self::Anisotropic),
            other => Err(Error::invalid("regime", format!("unknown regime {other:?}"))),
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Planar => "2d",
            Self::Isotropic => "3d-iso",
            Self::Anisotropic => "3d-aniso",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlcmOptions {
    #[serde(default = "yes")]
    pub symmetric: bool,
    #[serde(default)]
    pub normalization: Normalization,
    /// Pair distance in voxels, applied to every offset.
    #[serde(default = "one")]
    pub distance: usize,
    /// Maximum spacing ratio accepted by the isotropic builder.
    #[serde(default = "default_isotropy_tolerance")]
    pub isotropy_tolerance: f64,
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

fn default_isotropy_tolerance() -> f64 {
    1.2
}

impl Default for GlcmOptions {
    fn default() -> Self {
        Self {
            symmetric: true,
            normalization: Normalization::Probability,
            distance: 1,
            isotropy_tolerance: default_isotropy_tolerance(),
        }
    }
}

/// Fixed-size `L x L x C` matrix stack, channel-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GlcmImage {
    levels: usize,
    channels: usize,
    values: Vec<f64>,
    normalization: Normalization,
    pair_counts: Vec<u64>,
}

impl GlcmImage {
    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    /// Total counted entries per channel before normalization (pairs, doubled
    /// in symmetric mode, summed over directions).
    pub fn pair_counts(&self) -> &[u64] {
        &self.pair_counts
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.levels * self.levels;
        &self.values[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.values[(c * self.levels + i) * self.levels + j]
    }

    /// Stacks single-channel images in order.
    pub fn stack(parts: Vec<GlcmImage>) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::invalid("glcm stack", "no channels"))?;
        let (levels, normalization) = (first.levels, first.normalization);
        if parts.iter().any(|p| p.levels != levels || p.normalization != normalization) {
            return Err(Error::invalid("glcm stack", "channels disagree on levels or normalization"));
        }
        let channels = parts.iter().map(|p| p.channels).sum();
        let mut values = Vec::with_capacity(channels * levels * levels);
        let mut pair_counts = Vec::with_capacity(channels);
        for p in parts {
            values.extend(p.values);
            pair_counts.extend(p.pair_counts);
        }
        Ok(Self { levels, channels, values, normalization, pair_counts })
    }

    /// Narrows to `f32`, laid out as a GRD1 image with dims `[L, L, 1]`.
    pub fn to_grid_image(&self) -> GridImage {
        let values = self.values.iter().map(|&v| v as f32).collect();
        GridImage::new([self.levels, self.levels, 1], self.channels, [1.0; 3], values)
            .expect("glcm values are finite and non-negative")
    }
}

/// Provenance record written next to a serialized GLCM image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlcmProvenance {
    pub quantization: QuantizationSpec,
    pub regime: Regime,
    pub channels: usize,
    pub symmetric: bool,
    pub normalization: Normalization,
    pub distance: usize,
    pub directions: Vec<Offset>,
    pub pair_counts: Vec<u64>,
}

impl GlcmProvenance {
    pub fn new(image: &GlcmImage, spec: &QuantizationSpec, regime: Regime, opts: &GlcmOptions) -> Self {
        Self {
            quantization: *spec,
            regime,
            channels: image.channels,
            symmetric: opts.symmetric,
            normalization: opts.normalization,
            distance: opts.distance,
            directions: regime.directions().0,
            pair_counts: image.pair_counts.clone(),
        }
    }
}

/// Path of the provenance sidecar for a GLCM image file: `<path>.json`.
pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

pub fn save_glcm_image(path: impl AsRef<Path>, image: &GlcmImage, provenance: &GlcmProvenance) -> Result<()> {
    let path = path.as_ref();
    volume::save_image(path, &image.to_grid_image())?;
    let side = sidecar_path(path);
    let json = serde_json::to_vec_pretty(provenance).map_err(|source| Error::Json { path: side.clone(), source })?;
    std::fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

/// Counts co-occurrences for one offset on a single-channel grid.
pub fn accumulate(grid: &QuantizedGrid, mask: &RoiMask, offset: Offset, symmetric: bool) -> Result<Glcm> {
    if grid.channels() != 1 {
        return Err(Error::invalid("accumulate", format!("expected 1 channel, got {}", grid.channels())));
    }
    accumulate_channel(grid, 0, mask, offset, 1, symmetric)
}

/// Counts co-occurrences for one offset (scaled by `distance`) on one
/// channel of `grid`.
pub fn accumulate_channel(
    grid: &QuantizedGrid,
    channel: usize,
    mask: &RoiMask,
    offset: Offset,
    distance: usize,
    symmetric: bool,
) -> Result<Glcm> {
    check_grid_mask(grid, mask)?;
    if channel >= grid.channels() {
        return Err(Error::invalid("accumulate", format!("channel {channel} of {}", grid.channels())));
    }
    let bbox = mask_bounding_box(mask)?;
    let mut glcm = Glcm::zeros(grid.levels(), symmetric);
    accumulate_into(&mut glcm.counts, grid.levels(), grid.channel(channel), mask, &bbox, offset.scaled(distance), symmetric);
    Ok(glcm)
}

fn check_grid_mask(grid: &QuantizedGrid, mask: &RoiMask) -> Result<()> {
    if grid.dims() != mask.dims() {
        return Err(Error::DimMismatch { image: grid.dims(), mask: mask.dims() });
    }
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(())
}

/// Hot loop. Both pair endpoints must be in the mask, hence in `bbox`, so
/// iteration is confined to the box and the shifted box overlap.
fn accumulate_into(
    counts: &mut [u64],
    levels: usize,
    codes: &[u16],
    mask: &RoiMask,
    bbox: &BoundingBox,
    shift: [isize; 3],
    symmetric: bool,
) {
    let [nx, ny, _] = mask.dims();
    let bits = mask.bits();
    // Reference-voxel range per axis such that p and p + shift are both in the box.
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for a in 0..3 {
        let (bmin, bmax) = (bbox.min[a] as isize, bbox.max[a] as isize);
        let l = bmin.max(bmin - shift[a]);
        let h = bmax.min(bmax - shift[a]);
        if l > h {
            return;
        }
        lo[a] = l as usize;
        hi[a] = h as usize;
    }
    let delta = (shift[2] * ny as isize + shift[1]) * nx as isize + shift[0];
    for z in lo[2]..=hi[2] {
        for y in lo[1]..=hi[1] {
            let row = (z * ny + y) * nx;
            for p in row + lo[0]..=row + hi[0] {
                let q = (p as isize + delta) as usize;
                if bits[p] & bits[q] {
                    let (i, j) = (codes[p] as usize, codes[q] as usize);
                    counts[i * levels + j] += 1;
                    if symmetric {
                        counts[j * levels + i] += 1;
                    }
                }
            }
        }
    }
}

/// Applies `mode` to a single count matrix.
pub fn normalize(glcm: &Glcm, mode: Normalization) -> Result<GlcmImage> {
    normalize_counts(glcm.levels, &glcm.counts, 1, mode, None)
}

/// `divisor` is the number of matrices summed into `sum`; raw mode reports
/// their mean. Probability modes divide by the summed total directly.
fn normalize_counts(
    levels: usize,
    sum: &[u64],
    divisor: u64,
    mode: Normalization,
    channel: Option<usize>,
) -> Result<GlcmImage> {
    let total: u64 = sum.iter().sum();
    if total == 0 && mode != Normalization::Raw {
        return Err(Error::NoPairs { channel });
    }
    let values = match mode {
        Normalization::Raw => sum.iter().map(|&c| c as f64 / divisor as f64).collect(),
        Normalization::Probability => sum.iter().map(|&c| c as f64 / total as f64).collect(),
        Normalization::Log1p => sum.iter().map(|&c| (c as f64 / total as f64).ln_1p()).collect(),
    };
    Ok(GlcmImage { levels, channels: 1, values, normalization: mode, pair_counts: vec![total] })
}

fn check_builder_input(image: &GridImage, mask: &RoiMask, spec: &QuantizationSpec) -> Result<()> {
    spec.validate()?;
    validate_pair(image, mask)
}

fn require_single_channel(image: &GridImage) -> Result<()> {
    if image.channels() != 1 {
        return Err(Error::invalid(
            "glcm builder",
            format!("expected a single-channel image, got {} channels; use the multi-channel builder", image.channels()),
        ));
    }
    Ok(())
}

/// Sums the count matrices of `directions` on one channel.
fn summed_counts(
    q: &QuantizedGrid,
    channel: usize,
    mask: &RoiMask,
    bbox: &BoundingBox,
    directions: &DirectionSet,
    opts: &GlcmOptions,
) -> Vec<u64> {
    let l = q.levels();
    let mut sum = vec![0u64; l * l];
    for o in directions.offsets() {
        accumulate_into(&mut sum, l, q.channel(channel), mask, bbox, o.scaled(opts.distance), opts.symmetric);
    }
    sum
}

fn check_regime(image: &GridImage, regime: Regime, opts: &GlcmOptions) -> Result<()> {
    if opts.distance == 0 {
        return Err(Error::invalid("glcm options", "distance must be at least 1"));
    }
    match regime {
        Regime::Planar if !image.is_2d() => Err(Error::invalid(
            "glcm builder",
            format!("2d regime needs z = 1, got dims {:?}", image.dims()),
        )),
        Regime::Isotropic => {
            if image.is_2d() {
                return Err(Error::invalid("glcm builder", "isotropic 3d regime needs z > 1"));
            }
            let ratio = image.anisotropy();
            if ratio > opts.isotropy_tolerance {
                return Err(Error::WrongRegime { ratio, tolerance: opts.isotropy_tolerance });
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

fn build_channel(
    q: &QuantizedGrid,
    channel: usize,
    mask: &RoiMask,
    bbox: &BoundingBox,
    regime: Regime,
    opts: &GlcmOptions,
    label: Option<usize>,
) -> Result<GlcmImage> {
    let directions = regime.directions();
    let sum = summed_counts(q, channel, mask, bbox, &directions, opts);
    let divisor = match regime {
        Regime::Planar | Regime::Isotropic => directions.len() as u64,
        Regime::Anisotropic => 1,
    };
    if sum.iter().all(|&c| c == 0) {
        return Err(Error::NoPairs { channel: label });
    }
    normalize_counts(q.levels(), &sum, divisor, opts.normalization, label)
}

fn build_single(image: &GridImage, mask: &RoiMask, spec: &QuantizationSpec, regime: Regime, opts: &GlcmOptions) -> Result<GlcmImage> {
    check_builder_input(image, mask, spec)?;
    require_single_channel(image)?;
    check_regime(image, regime, opts)?;
    let q = quantize(image, spec)?;
    let bbox = mask_bounding_box(mask)?;
    build_channel(&q, 0, mask, &bbox, regime, opts, None)
}

/// 2D single-channel image: mean of the four in-plane GLCMs, then normalized.
pub fn glcm_image_2d(image: &GridImage, mask: &RoiMask, spec: &QuantizationSpec, opts: &GlcmOptions) -> Result<GlcmImage> {
    build_single(image, mask, spec, Regime::Planar, opts)
}

/// Near-isotropic 3D single-channel volume: mean of the 13 volumetric GLCMs.
pub fn glcm_image_3d_isotropic(image: &GridImage, mask: &RoiMask, spec: &QuantizationSpec, opts: &GlcmOptions) -> Result<GlcmImage> {
    build_single(image, mask, spec, Regime::Isotropic, opts)
}

/// Anisotropic 3D single-channel volume: in-plane GLCMs of every slice added
/// together.
pub fn glcm_image_3d_anisotropic(image: &GridImage, mask: &RoiMask, spec: &QuantizationSpec, opts: &GlcmOptions) -> Result<GlcmImage> {
    build_single(image, mask, spec, Regime::Anisotropic, opts)
}

/// Per-channel GLCM images stacked in channel order. Channels are processed
/// in parallel; each channel's result is independent of the others.
pub fn glcm_image_multichannel(
    image: &GridImage,
    mask: &RoiMask,
    spec: &QuantizationSpec,
    regime: Regime,
    opts: &GlcmOptions,
) -> Result<GlcmImage> {
    check_builder_input(image, mask, spec)?;
    if image.channels() < 2 {
        return Err(Error::invalid("glcm builder", "multi-channel builder needs at least 2 channels"));
    }
    check_regime(image, regime, opts)?;
    let q = quantize(image, spec)?;
    let bbox = mask_bounding_box(mask)?;
    let parts = (0..image.channels())
        .into_par_iter()
        .map(|c| build_channel(&q, c, mask, &bbox, regime, opts, Some(c)))
        .collect::<Result<Vec<_>>>()?;
    GlcmImage::stack(parts)
}

/// Dispatches on channel count: single-channel builders for `C = 1`, the
/// multi-channel builder otherwise.
pub fn glcm_image(image: &GridImage, mask: &RoiMask, spec: &QuantizationSpec, regime: Regime, opts: &GlcmOptions) -> Result<GlcmImage> {
    if image.channels() == 1 {
        build_single(image, mask, spec, regime, opts)
    } else {
        glcm_image_multichannel(image, mask, spec, regime, opts)
    }
}
