//! Training checkpoints: model PLY, binary Adam-state sidecar and JSON
//! metadata.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::SplatModel;
use crate::train::AdamState;

use super::{atomic_write, encode_splat_ply, read_bytes, sha256_hex, write_json};

const ADAM_MAGIC: &[u8; 8] = b"ISOADAM1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub iteration: u64,
    pub config_hash: String,
    pub gaussians: usize,
    pub model_file: String,
    pub model_sha256: String,
    pub adam_file: String,
    pub adam_sha256: String,
}

pub fn write_adam_state(path: &Path, state: &AdamState) -> Result<()> {
    atomic_write(path, &encode_adam(state))
}

fn encode_adam(state: &AdamState) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + state.m.len() * 14 * 16);
    out.extend_from_slice(ADAM_MAGIC);
    out.extend_from_slice(&state.step.to_le_bytes());
    out.extend_from_slice(&(state.m.len() as u64).to_le_bytes());
    for row in state.m.iter().chain(&state.v) {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_adam_state(path: &Path) -> Result<AdamState> {
    let bytes = read_bytes(path)?;
    if bytes.len() < 24 || &bytes[..8] != ADAM_MAGIC {
        return Err(Error::malformed(path, "not an optimizer state file"));
    }
    let step = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let n = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let body = &bytes[24..];
    if Some(body.len()) != n.checked_mul(2 * 14 * 8) {
        return Err(Error::malformed(path, "optimizer state is truncated"));
    }
    let rows: Vec<[f64; 14]> = body
        .chunks_exact(14 * 8)
        .map(|c| std::array::from_fn(|k| f64::from_le_bytes(c[k * 8..k * 8 + 8].try_into().unwrap())))
        .collect();
    let (m, v) = rows.split_at(n);
    Ok(AdamState { step, m: m.to_vec(), v: v.to_vec() })
}

/// Writes `ckpt_<iteration>.{ply,adam,json}` into `dir`; the metadata is
/// written last so its presence marks a complete checkpoint.
pub fn write_checkpoint(dir: &Path, iteration: u64, model: &SplatModel, adam: &AdamState, config_hash: &str) -> Result<PathBuf> {
    let stem = format!("ckpt_{iteration:06}");
    let model_bytes = encode_splat_ply(model);
    let adam_bytes = encode_adam(adam);
    let model_file = format!("{stem}.ply");
    let adam_file = format!("{stem}.adam");
    atomic_write(&dir.join(&model_file), &model_bytes)?;
    atomic_write(&dir.join(&adam_file), &adam_bytes)?;
    let meta = CheckpointMeta {
        iteration,
        config_hash: config_hash.to_string(),
        gaussians: model.len(),
        model_sha256: sha256_hex(&model_bytes),
        adam_sha256: sha256_hex(&adam_bytes),
        model_file,
        adam_file,
    };
    let meta_path = dir.join(format!("{stem}.json"));
    write_json(&meta_path, &meta)?;
    Ok(meta_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss::Gaussian3D;
    use crate::io::{hash_file, read_json, read_model};

    #[test]
    fn checkpoint_files_match_metadata() {
        let model = SplatModel::new(vec![Gaussian3D::isotropic([0.1, 0.2, 0.3], 0.05, 0.4, [0.2, 0.5, 0.9]); 4]);
        let mut adam = AdamState::new(4);
        adam.step = 17;
        adam.m[2][5] = -3.25;
        adam.v[3][13] = 1e-300;
        let dir = tempfile::tempdir().unwrap();
        let meta_path = write_checkpoint(dir.path(), 17, &model, &adam, "abc").unwrap();
        let meta: CheckpointMeta = read_json(&meta_path).unwrap();
        assert_eq!(meta.iteration, 17);
        assert_eq!(hash_file(&dir.path().join(&meta.model_file)).unwrap(), meta.model_sha256);
        assert_eq!(read_model(&dir.path().join(&meta.model_file)).unwrap(), model);
        assert_eq!(read_adam_state(&dir.path().join(&meta.adam_file)).unwrap(), adam);
    }

    #[test]
    fn truncated_adam_state() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.adam");
        write_adam_state(&p, &AdamState::new(3)).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
        assert_eq!(read_adam_state(&p).unwrap_err().kind(), "MalformedFile");
    }
}
