//! GRD1 / MSK1 volume files.
//!
//! Each file starts with a single-line JSON header terminated by `\n`:
//!
//! ```text
//! {"magic":"GRD1","dims":[x,y,z],"channels":C,"spacing_mm":[sx,sy,sz],"dtype":"f32le"}
//! ```
//!
//! followed by the raw payload in channel-major, then z, y, x order (x
//! fastest). GRD1 payloads are little-endian `f32`; MSK1 payloads are one
//! `u8` per voxel holding 0 or 1.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{voxel_count, GridImage, RoiMask};

pub const IMAGE_MAGIC: &str = "GRD1";
pub const MASK_MAGIC: &str = "MSK1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub magic: String,
    pub dims: [usize; 3],
    pub channels: usize,
    pub spacing_mm: [f64; 3],
    pub dtype: String,
}

impl VolumeHeader {
    fn payload_len(&self, bytes_per_value: usize) -> usize {
        voxel_count(self.dims) * self.channels * bytes_per_value
    }
}

pub fn encode_image(image: &GridImage) -> Vec<u8> {
    let header = VolumeHeader {
        magic: IMAGE_MAGIC.into(),
        dims: image.dims(),
        channels: image.channels(),
        spacing_mm: image.spacing(),
        dtype: "f32le".into(),
    };
    let mut out = header_line(&header);
    out.reserve(image.values().len() * 4);
    for v in image.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn encode_mask(mask: &RoiMask, spacing_mm: [f64; 3]) -> Vec<u8> {
    let header = VolumeHeader {
        magic: MASK_MAGIC.into(),
        dims: mask.dims(),
        channels: 1,
        spacing_mm,
        dtype: "u8".into(),
    };
    let mut out = header_line(&header);
    out.extend(mask.bits().iter().map(|&b| b as u8));
    out
}

fn header_line(header: &VolumeHeader) -> Vec<u8> {
    let mut out = serde_json::to_vec(header).expect("header serializes");
    out.push(b'\n');
    out
}

fn split_header<'a>(path: &Path, bytes: &'a [u8]) -> Result<(VolumeHeader, &'a [u8])> {
    let header_err = |reason: String| Error::Header { path: path.to_path_buf(), reason };
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| header_err("missing header terminator".into()))?;
    let header: VolumeHeader =
        serde_json::from_slice(&bytes[..newline]).map_err(|e| header_err(e.to_string()))?;
    if header.dims.contains(&0) || header.channels == 0 {
        return Err(header_err(format!(
            "degenerate shape dims={:?} channels={}",
            header.dims, header.channels
        )));
    }
    Ok((header, &bytes[newline + 1..]))
}

fn check_payload(path: &Path, expected: usize, actual: usize) -> Result<()> {
    if actual < expected {
        Err(Error::Truncated { path: path.to_path_buf(), expected, actual })
    } else if actual > expected {
        Err(Error::PayloadSize { path: path.to_path_buf(), expected, actual })
    } else {
        Ok(())
    }
}

pub fn decode_image(path: &Path, bytes: &[u8]) -> Result<GridImage> {
    let (header, payload) = split_header(path, bytes)?;
    if header.magic != IMAGE_MAGIC {
        return Err(Error::Header {
            path: path.to_path_buf(),
            reason: format!("magic {:?}, expected {IMAGE_MAGIC:?}", header.magic),
        });
    }
    if header.dtype != "f32le" {
        return Err(Error::Header {
            path: path.to_path_buf(),
            reason: format!("dtype {:?}, expected \"f32le\"", header.dtype),
        });
    }
    check_payload(path, header.payload_len(4), payload.len())?;
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    GridImage::new(header.dims, header.channels, header.spacing_mm, values).map_err(|e| Error::Header {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Decodes a mask together with its recorded spacing.
pub fn decode_mask(path: &Path, bytes: &[u8]) -> Result<(RoiMask, [f64; 3])> {
    let (header, payload) = split_header(path, bytes)?;
    if header.magic != MASK_MAGIC || header.dtype != "u8" || header.channels != 1 {
        return Err(Error::Header {
            path: path.to_path_buf(),
            reason: format!(
                "expected magic {MASK_MAGIC:?}, dtype \"u8\", 1 channel; got {:?}, {:?}, {}",
                header.magic, header.dtype, header.channels
            ),
        });
    }
    check_payload(path, header.payload_len(1), payload.len())?;
    let bits = payload
        .iter()
        .enumerate()
        .map(|(i, &b)| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::Header {
                path: path.to_path_buf(),
                reason: format!("mask byte {other} at voxel {i} is not 0/1"),
            }),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((RoiMask::new(header.dims, bits)?, header.spacing_mm))
}

pub fn save_image(path: impl AsRef<Path>, image: &GridImage) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_image(image)).map_err(|e| Error::io(path, e))
}

pub fn save_mask(path: impl AsRef<Path>, mask: &RoiMask, spacing_mm: [f64; 3]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_mask(mask, spacing_mm)).map_err(|e| Error::io(path, e))
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<GridImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(path, &bytes)
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<RoiMask> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mask(path, &bytes).map(|(mask, _)| mask)
}
