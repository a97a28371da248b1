//! Checkpoint format: a JSON manifest describing the architecture plus a
//! flat little-endian f32 parameter blob. The loader rejects any manifest
//! mismatch.

use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::features::PLANE_LAYOUT_VERSION;
use super::{NetConfig, NetParams};
use crate::error::{CoreError, Result};

const FORMAT: &str = "ipp-net-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub grid_dim: usize,
    pub n_altitudes: usize,
    pub plane_layout_version: u32,
    pub arch: NetConfig,
    pub training_iteration: usize,
    pub param_count: usize,
}

fn paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{stem}.json")), dir.join(format!("{stem}.bin")))
}

/// Writes `<stem>.json` and `<stem>.bin` under `dir`.
pub fn save(
    net: &NetParams,
    grid_dim: usize,
    training_iteration: usize,
    dir: &Path,
    stem: &str,
) -> Result<()> {
    let manifest = CheckpointManifest {
        format: FORMAT.to_string(),
        version: VERSION,
        grid_dim,
        n_altitudes: net.n_altitudes,
        plane_layout_version: PLANE_LAYOUT_VERSION,
        arch: net.config.clone(),
        training_iteration,
        param_count: net.param_count(),
    };
    let (json_path, bin_path) = paths(dir, stem);
    fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CoreError::Checkpoint(format!("manifest serialization failed: {e}")))?;
    fs::write(json_path, json)?;

    let mut blob = Vec::with_capacity(net.param_count() * 4);
    for v in net.flatten() {
        blob.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut file = fs::File::create(bin_path)?;
    file.write_all(&blob)?;
    Ok(())
}

/// Loads a checkpoint saved by [`save`], validating the manifest.
pub fn load(dir: &Path, stem: &str) -> Result<(NetParams, CheckpointManifest)> {
    let (json_path, bin_path) = paths(dir, stem);
    let manifest: CheckpointManifest = serde_json::from_str(
        &fs::read_to_string(&json_path)
            .map_err(|e| CoreError::Checkpoint(format!("cannot read {}: {e}", json_path.display())))?,
    )
    .map_err(|e| CoreError::Checkpoint(format!("malformed manifest: {e}")))?;

    if manifest.format != FORMAT {
        return Err(CoreError::Checkpoint(format!(
            "unexpected format `{}`",
            manifest.format
        )));
    }
    if manifest.version != VERSION {
        return Err(CoreError::Checkpoint(format!(
            "unsupported checkpoint version {}",
            manifest.version
        )));
    }
    if manifest.plane_layout_version != PLANE_LAYOUT_VERSION {
        return Err(CoreError::Checkpoint(format!(
            "plane layout {} does not match supported layout {}",
            manifest.plane_layout_version, PLANE_LAYOUT_VERSION
        )));
    }

    let mut blob = Vec::new();
    fs::File::open(&bin_path)
        .map_err(|e| CoreError::Checkpoint(format!("cannot read {}: {e}", bin_path.display())))?
        .read_to_end(&mut blob)?;
    if blob.len() != manifest.param_count * 4 {
        return Err(CoreError::Checkpoint(format!(
            "blob holds {} bytes, manifest expects {}",
            blob.len(),
            manifest.param_count * 4
        )));
    }
    let flat: Vec<f64> = blob
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();

    let mut net = NetParams::init(&manifest.arch, manifest.n_altitudes, 0);
    net.load_flat(&flat)?;
    Ok((net, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn tiny_net() -> NetParams {
        let cfg = NetConfig {
            channels: 2,
            encoder_blocks: 1,
            pool_every: 1,
            value_channels: 2,
            history_frames: 0,
            ..NetConfig::default()
        };
        NetParams::init(&cfg, 2, 42)
    }

    #[test]
    fn round_trip_preserves_params_to_f32_precision() {
        let net = tiny_net();
        let dir = tempdir().unwrap();
        save(&net, 5, 3, dir.path(), "ckpt_0003").unwrap();
        let (loaded, manifest) = load(dir.path(), "ckpt_0003").unwrap();
        assert_eq!(manifest.grid_dim, 5);
        assert_eq!(manifest.training_iteration, 3);
        assert_eq!(manifest.param_count, net.param_count());
        for (a, b) in net.flatten().iter().zip(loaded.flatten()) {
            assert_eq!(*a as f32, b as f32);
        }
    }

    #[test]
    fn loader_rejects_truncated_blob() {
        let net = tiny_net();
        let dir = tempdir().unwrap();
        save(&net, 5, 0, dir.path(), "ckpt").unwrap();
        let bin = dir.path().join("ckpt.bin");
        let bytes = std::fs::read(&bin).unwrap();
        std::fs::write(&bin, &bytes[..bytes.len() - 4]).unwrap();
        assert!(load(dir.path(), "ckpt").is_err());
    }

    #[test]
    fn loader_rejects_layout_mismatch() {
        let net = tiny_net();
        let dir = tempdir().unwrap();
        save(&net, 5, 0, dir.path(), "ckpt").unwrap();
        let json = dir.path().join("ckpt.json");
        let text = std::fs::read_to_string(&json)
            .unwrap()
            .replace("\"plane_layout_version\": 1", "\"plane_layout_version\": 9");
        std::fs::write(&json, text).unwrap();
        assert!(load(dir.path(), "ckpt").is_err());
    }
}
