//! Images, region-of-interest masks and intensity quantization.
//!
//! Voxel storage is channel-major, then z, y, x with x varying fastest. The
//! same order is used on disk (see [`crate::volume`]), so a flat index is
//! `((c * nz + z) * ny + y) * nx + x`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on quantization levels (GLCM side length).
pub const MAX_LEVELS: usize = 4096;

/// Multi-channel scalar field on a regular 2D/3D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridImage {
    dims: [usize; 3],
    channels: usize,
    spacing: [f64; 3],
    values: Vec<f32>,
}

impl GridImage {
    /// `dims` is `[x, y, z]`; 2D images use `z = 1`.
    pub fn new(dims: [usize; 3], channels: usize, spacing: [f64; 3], values: Vec<f32>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::invalid("image", format!("zero extent in dims {dims:?}")));
        }
        if channels == 0 {
            return Err(Error::invalid("image", "channel count must be at least 1"));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::invalid("image", format!("spacing must be positive, got {spacing:?}")));
        }
        let expected = voxel_count(dims) * channels;
        if values.len() != expected {
            return Err(Error::ShapeMismatch {
                context: "image values",
                expected: vec![expected],
                actual: vec![values.len()],
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid("image", format!("non-finite value at index {index}")));
        }
        Ok(Self { dims, channels, spacing, values })
    }

    /// Single-channel 2D image from row-major `[y][x]` data.
    pub fn from_2d(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        Self::new([width, height, 1], 1, [1.0; 3], values)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn is_2d(&self) -> bool {
        self.dims[2] == 1
    }

    pub fn voxels(&self) -> usize {
        voxel_count(self.dims)
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.voxels();
        &self.values[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, x: usize, y: usize, z: usize) -> f32 {
        self.values[c * self.voxels() + linear_index(self.dims, x, y, z)]
    }

    /// Ratio of largest to smallest voxel spacing over the axes that have
    /// more than one voxel.
    pub fn anisotropy(&self) -> f64 {
        let used: Vec<f64> = (0..3).filter(|&a| self.dims[a] > 1).map(|a| self.spacing[a]).collect();
        if used.is_empty() {
            return 1.0;
        }
        let max = used.iter().cloned().fold(f64::MIN, f64::max);
        let min = used.iter().cloned().fold(f64::MAX, f64::min);
        max / min
    }
}

/// Binary region of interest on the same spatial grid as an image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoiMask {
    dims: [usize; 3],
    bits: Vec<bool>,
}

impl RoiMask {
    pub fn new(dims: [usize; 3], bits: Vec<bool>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::invalid("mask", format!("zero extent in dims {dims:?}")));
        }
        if bits.len() != voxel_count(dims) {
            return Err(Error::ShapeMismatch {
                context: "mask bits",
                expected: vec![voxel_count(dims)],
                actual: vec![bits.len()],
            });
        }
        Ok(Self { dims, bits })
    }

    pub fn full(dims: [usize; 3]) -> Self {
        Self { dims, bits: vec![true; voxel_count(dims)] }
    }

    pub fn empty(dims: [usize; 3]) -> Self {
        Self { dims, bits: vec![false; voxel_count(dims)] }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.bits[linear_index(self.dims, x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, value: bool) {
        let i = linear_index(self.dims, x, y, z);
        self.bits[i] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }
}

/// Mapping of intensities onto `levels` integer codes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizationSpec {
    pub levels: usize,
    pub range_lo: f64,
    pub range_hi: f64,
    /// Clamp out-of-range values; when false they are an error.
    #[serde(default = "default_clamp")]
    pub clamp: bool,
}

fn default_clamp() -> bool {
    true
}

impl Default for QuantizationSpec {
    fn default() -> Self {
        Self { levels: 256, range_lo: 0.0, range_hi: 255.0, clamp: true }
    }
}

impl QuantizationSpec {
    pub fn new(levels: usize, range_lo: f64, range_hi: f64) -> Self {
        Self { levels, range_lo, range_hi, clamp: true }
    }

    pub fn strict(mut self) -> Self {
        self.clamp = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=MAX_LEVELS).contains(&self.levels) {
            return Err(Error::invalid(
                "quantization spec",
                format!("levels must be in [2, {MAX_LEVELS}], got {}", self.levels),
            ));
        }
        if !(self.range_lo.is_finite() && self.range_hi.is_finite() && self.range_lo < self.range_hi) {
            return Err(Error::invalid(
                "quantization spec",
                format!("need finite range_lo < range_hi, got [{}, {}]", self.range_lo, self.range_hi),
            ));
        }
        Ok(())
    }

    /// Level code of a single value. `None` when the value is non-finite, or
    /// out of range in strict mode.
    pub fn code(&self, value: f64) -> Option<u16> {
        if !value.is_finite() {
            return None;
        }
        let (lo, hi) = (self.range_lo, self.range_hi);
        if !self.clamp && (value < lo || value > hi) {
            return None;
        }
        let v = value.clamp(lo, hi);
        let top = self.levels - 1;
        let code = ((self.levels as f64) * (v - lo) / (hi - lo)).floor() as usize;
        Some(code.min(top) as u16)
    }

    /// Centre of a level's intensity bin.
    pub fn bin_center(&self, code: u16) -> f64 {
        let width = (self.range_hi - self.range_lo) / self.levels as f64;
        self.range_lo + (code as f64 + 0.5) * width
    }

    /// Maps an intensity into `[0, 1]` over the configured range.
    pub fn unit(&self, value: f64) -> f64 {
        ((value - self.range_lo) / (self.range_hi - self.range_lo)).clamp(0.0, 1.0)
    }
}

/// Per-voxel level codes, laid out like [`GridImage`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedGrid {
    dims: [usize; 3],
    channels: usize,
    levels: usize,
    codes: Vec<u16>,
}

impl QuantizedGrid {
    pub fn new(dims: [usize; 3], channels: usize, levels: usize, codes: Vec<u16>) -> Result<Self> {
        if codes.len() != voxel_count(dims) * channels {
            return Err(Error::ShapeMismatch {
                context: "quantized codes",
                expected: vec![voxel_count(dims) * channels],
                actual: vec![codes.len()],
            });
        }
        if !(2..=MAX_LEVELS).contains(&levels) {
            return Err(Error::invalid("quantized grid", format!("levels {levels} out of range")));
        }
        if let Some(&c) = codes.iter().find(|&&c| c as usize >= levels) {
            return Err(Error::invalid("quantized grid", format!("code {c} >= levels {levels}")));
        }
        Ok(Self { dims, channels, levels, codes })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn codes(&self) -> &[u16] {
        &self.codes
    }

    pub fn channel(&self, c: usize) -> &[u16] {
        let n = voxel_count(self.dims);
        &self.codes[c * n..(c + 1) * n]
    }
}

/// Inclusive per-axis index ranges, `[x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub min: [usize; 3],
    pub max: [usize; 3],
}

impl BoundingBox {
    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3).all(|a| self.min[a] <= p[a] && p[a] <= self.max[a])
    }

    pub fn extent(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| self.max[a] - self.min[a] + 1)
    }
}

pub fn quantize(image: &GridImage, spec: &QuantizationSpec) -> Result<QuantizedGrid> {
    spec.validate()?;
    let codes = image
        .values()
        .iter()
        .enumerate()
        .map(|(index, &v)| {
            spec.code(v as f64).ok_or(Error::QuantizationRange {
                value: v as f64,
                index,
                lo: spec.range_lo,
                hi: spec.range_hi,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QuantizedGrid { dims: image.dims(), channels: image.channels(), levels: spec.levels, codes })
}

/// Checks that `mask` matches the spatial grid of `image` and selects at
/// least one voxel.
pub fn validate_pair(image: &GridImage, mask: &RoiMask) -> Result<()> {
    if image.dims() != mask.dims() {
        return Err(Error::DimMismatch { image: image.dims(), mask: mask.dims() });
    }
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(())
}

pub fn mask_bounding_box(mask: &RoiMask) -> Result<BoundingBox> {
    let [nx, ny, _] = mask.dims();
    let mut min = [usize::MAX; 3];
    let mut max = [0usize; 3];
    let mut any = false;
    for (i, _) in mask.bits().iter().enumerate().filter(|(_, &b)| b) {
        let p = [i % nx, (i / nx) % ny, i / (nx * ny)];
        for a in 0..3 {
            min[a] = min[a].min(p[a]);
            max[a] = max[a].max(p[a]);
        }
        any = true;
    }
    if !any {
        return Err(Error::EmptyMask);
    }
    Ok(BoundingBox { min, max })
}

pub(crate) fn voxel_count(dims: [usize; 3]) -> usize {
    dims.iter().product()
}

pub(crate) fn linear_index(dims: [usize; 3], x: usize, y: usize, z: usize) -> usize {
    (z * dims[1] + y) * dims[0] + x
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn image_2d(w: usize, h: usize, v: f32) -> GridImage {
        GridImage::from_2d(w, h, vec![v; w * h]).unwrap()
    }

    #[test]
    fn quantize_boundaries() {
        let spec = QuantizationSpec::new(8, 10.0, 20.0);
        assert_eq!(spec.code(10.0), Some(0));
        assert_eq!(spec.code(20.0), Some(7));
    }

    #[test]
    fn quantize_near_top_of_range() {
        // floor(256 * 254.999 / 255) = floor(255.996)
        let spec = QuantizationSpec::new(256, 0.0, 255.0);
        assert_eq!(spec.code(254.999), Some(255));
        assert_eq!(spec.code(254.0), Some(254));
        // integer intensities map to themselves on the [0, 255] / 256 grid
        for v in 0..=255u16 {
            assert_eq!(spec.code(v as f64), Some(v));
        }
    }

    #[test]
    fn constant_image_quantizes_to_one_code() {
        let q = quantize(&image_2d(5, 4, 42.5), &QuantizationSpec::default()).unwrap();
        assert!(q.codes().iter().all(|&c| c == q.codes()[0]));
    }

    #[test]
    fn strict_mode_rejects_out_of_range() {
        let img = GridImage::from_2d(2, 1, vec![0.0, 300.0]).unwrap();
        let err = quantize(&img, &QuantizationSpec::default().strict()).unwrap_err();
        assert!(matches!(err, Error::QuantizationRange { index: 1, .. }));
        let q = quantize(&img, &QuantizationSpec::default()).unwrap();
        assert_eq!(q.codes(), &[0, 255]);
    }

    #[test]
    fn invalid_specs() {
        assert!(QuantizationSpec::new(1, 0.0, 1.0).validate().is_err());
        assert!(QuantizationSpec::new(4097, 0.0, 1.0).validate().is_err());
        assert!(QuantizationSpec::new(4, 1.0, 1.0).validate().is_err());
        assert!(QuantizationSpec::new(4096, 0.0, 1.0).validate().is_ok());
    }

    #[test]
    fn image_rejects_non_finite_and_bad_spacing() {
        assert!(GridImage::from_2d(2, 1, vec![0.0, f32::NAN]).is_err());
        assert!(GridImage::new([1, 1, 1], 1, [1.0, 0.0, 1.0], vec![0.0]).is_err());
        assert!(GridImage::new([2, 2, 1], 2, [1.0; 3], vec![0.0; 4]).is_err());
    }

    #[test]
    fn validate_pair_cases() {
        let img = image_2d(64, 64, 1.0);
        assert!(validate_pair(&img, &RoiMask::full([64, 64, 1])).is_ok());
        assert!(matches!(
            validate_pair(&img, &RoiMask::full([32, 32, 1])),
            Err(Error::DimMismatch { .. })
        ));
        assert!(matches!(validate_pair(&img, &RoiMask::empty([64, 64, 1])), Err(Error::EmptyMask)));
    }

    #[test]
    fn bounding_box_examples() {
        let mut m = RoiMask::empty([8, 8, 1]);
        m.set(3, 5, 0, true);
        assert_eq!(mask_bounding_box(&m).unwrap(), BoundingBox { min: [3, 5, 0], max: [3, 5, 0] });

        let full = RoiMask::full([8, 8, 1]);
        assert_eq!(mask_bounding_box(&full).unwrap(), BoundingBox { min: [0, 0, 0], max: [7, 7, 0] });

        let mut two = RoiMask::empty([8, 8, 1]);
        two.set(1, 1, 0, true);
        two.set(4, 2, 0, true);
        assert_eq!(mask_bounding_box(&two).unwrap(), BoundingBox { min: [1, 1, 0], max: [4, 2, 0] });

        assert!(matches!(mask_bounding_box(&RoiMask::empty([3, 3, 3])), Err(Error::EmptyMask)));
    }

    fn arb_mask() -> impl Strategy<Value = RoiMask> {
        (1usize..7, 1usize..7, 1usize..5)
            .prop_flat_map(|(x, y, z)| {
                proptest::collection::vec(any::<bool>(), x * y * z).prop_map(move |bits| (x, y, z, bits))
            })
            .prop_filter("non-empty", |(_, _, _, bits)| bits.iter().any(|&b| b))
            .prop_map(|(x, y, z, bits)| RoiMask::new([x, y, z], bits).unwrap())
    }

    proptest! {
        #[test]
        fn quantization_is_monotone(a in -50.0f64..300.0, b in -50.0f64..300.0, levels in 2usize..300) {
            let spec = QuantizationSpec::new(levels, 0.0, 255.0);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(spec.code(lo).unwrap() <= spec.code(hi).unwrap());
        }

        #[test]
        fn bin_centres_are_fixed_points(levels in 2usize..=MAX_LEVELS, lo in -1000.0f64..1000.0, width in 1.0f64..5000.0) {
            let spec = QuantizationSpec::new(levels, lo, lo + width);
            for code in [0, (levels / 2) as u16, (levels - 1) as u16] {
                prop_assert_eq!(spec.code(spec.bin_center(code)), Some(code));
            }
        }

        #[test]
        fn bounding_box_is_tight(mask in arb_mask()) {
            let bb = mask_bounding_box(&mask).unwrap();
            let [nx, ny, nz] = mask.dims();
            let mut touches_min = [false; 3];
            let mut touches_max = [false; 3];
            for z in 0..nz { for y in 0..ny { for x in 0..nx {
                if mask.get(x, y, z) {
                    let p = [x, y, z];
                    prop_assert!(bb.contains(p));
                    for a in 0..3 {
                        touches_min[a] |= p[a] == bb.min[a];
                        touches_max[a] |= p[a] == bb.max[a];
                    }
                }
            }}}
            prop_assert!(touches_min.iter().chain(touches_max.iter()).all(|&t| t));
        }
    }
}
