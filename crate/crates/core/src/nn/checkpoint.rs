//! Model checkpoints: a JSON manifest next to a little-endian `f32` blob.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::network::{DualBranchNet, NetworkConfig};

const FORMAT: &str = "glcm-cnn-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    /// Element offset into the blob.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub config: NetworkConfig,
    pub epoch: usize,
    pub dtype: String,
    /// File name of the weight blob, relative to the manifest.
    pub blob: String,
    pub params: Vec<ParamInfo>,
}

fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes `path` (manifest) and `path` with a `.bin` extension (weights).
pub fn save_checkpoint(path: &Path, net: &DualBranchNet<f32>, epoch: usize) -> Result<CheckpointManifest> {
    let blob = blob_path(path);
    let mut offset = 0;
    let params = net
        .param_shapes()
        .into_iter()
        .map(|(name, shape)| {
            let info = ParamInfo { name, offset, shape };
            offset += info.shape.iter().product::<usize>();
            info
        })
        .collect();
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        config: net.config().clone(),
        epoch,
        dtype: "f32".into(),
        blob: blob.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        params,
    };
    let bytes: Vec<u8> = net.params().iter().flat_map(|p| p.iter().flat_map(|v| v.to_le_bytes())).collect();
    fs::write(&blob, bytes).map_err(|e| Error::io(&blob, e))?;
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Json { path: path.into(), source: e })?;
    fs::write(path, json).map_err(|e| Error::io(path, e))?;
    Ok(manifest)
}

pub fn load_checkpoint(path: &Path) -> Result<(DualBranchNet<f32>, CheckpointManifest)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| Error::Json { path: path.into(), source: e })?;
    let header = |reason: String| Error::Header { path: path.into(), reason };
    if manifest.format != FORMAT {
        return Err(header(format!("unknown checkpoint format {:?}", manifest.format)));
    }
    if manifest.dtype != "f32" {
        return Err(header(format!("unsupported dtype {:?}", manifest.dtype)));
    }
    let mut net = DualBranchNet::<f32>::new(manifest.config.clone())?;
    let expected: Vec<_> = net.param_shapes();
    let found: Vec<_> = manifest.params.iter().map(|p| (p.name.clone(), p.shape.clone())).collect();
    if expected != found {
        return Err(header("parameter layout does not match the configured network".into()));
    }
    let blob = path.parent().unwrap_or(Path::new("")).join(&manifest.blob);
    let bytes = fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
    let want = net.param_len() * 4;
    if bytes.len() < want {
        return Err(Error::Truncated { path: blob, expected: want, actual: bytes.len() });
    }
    if bytes.len() > want {
        return Err(Error::PayloadSize { path: blob, expected: want, actual: bytes.len() });
    }
    let mut values = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    for p in net.params_mut() {
        p.iter_mut().for_each(|v| *v = values.next().expect("length checked"));
    }
    Ok((net, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> DualBranchNet<f32> {
        DualBranchNet::new(NetworkConfig::desk([1, 16, 16], [1, 8, 8], 3)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let original = net();
        let manifest = save_checkpoint(&path, &original, 7).unwrap();
        assert_eq!(manifest.blob, "model.bin");
        let (loaded, m) = load_checkpoint(&path).unwrap();
        assert_eq!(m.epoch, 7);
        assert_eq!(loaded, original);
    }

    #[test]
    fn corrupt_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_checkpoint(&path, &net(), 0).unwrap();
        let blob = dir.path().join("model.bin");
        let mut bytes = fs::read(&blob).unwrap();
        bytes.pop();
        fs::write(&blob, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Truncated { .. })));
        bytes.extend([0; 5]);
        fs::write(&blob, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::PayloadSize { .. })));
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_checkpoint(&path, &net(), 0).unwrap();
        let mut m: CheckpointManifest = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        m.params[0].name = "other".into();
        fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Header { .. })));
    }
}
