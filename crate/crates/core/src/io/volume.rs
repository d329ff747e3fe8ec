//! Scalar volumes as raw little-endian doubles plus a JSON header.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iso::Volume;

use super::{atomic_write, read_bytes, read_json, sha256_hex, write_json};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing: f64,
    pub origin: [f64; 3],
    /// Name of the raw file, relative to the header.
    pub data: String,
    pub sha256: String,
    #[serde(default)]
    pub kind: Option<String>,
}

fn raw_path(header_path: &Path) -> PathBuf {
    header_path.with_extension("raw")
}

/// Writes `<path>` (JSON header) and a sibling `.raw` file.
pub fn write_volume(path: &Path, vol: &Volume, kind: Option<&str>) -> Result<()> {
    let raw: Vec<u8> = vol.values.iter().flat_map(|v| v.to_le_bytes()).collect();
    let raw_file = raw_path(path);
    atomic_write(&raw_file, &raw)?;
    let header = VolumeHeader {
        dims: vol.dims,
        spacing: vol.spacing,
        origin: vol.origin,
        data: raw_file.file_name().unwrap().to_string_lossy().into_owned(),
        sha256: sha256_hex(&raw),
        kind: kind.map(str::to_string),
    };
    write_json(path, &header)
}

pub fn read_volume(path: &Path) -> Result<(Volume, VolumeHeader)> {
    let header: VolumeHeader = read_json(path)?;
    let raw_file = path.parent().unwrap_or(Path::new(".")).join(&header.data);
    let raw = read_bytes(&raw_file)?;
    if sha256_hex(&raw) != header.sha256 {
        return Err(Error::ManifestMismatch(format!("{} does not match its header hash", raw_file.display())));
    }
    let n: usize = header.dims.iter().product();
    if raw.len() != n * 8 {
        return Err(Error::malformed(&raw_file, format!("expected {} bytes, found {}", n * 8, raw.len())));
    }
    let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let vol = Volume::new(header.dims, header.spacing, header.origin, values)?;
    Ok((vol, header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iso::{make_volume, VolumeKind};

    #[test]
    fn volume_round_trip() {
        let vol = make_volume(VolumeKind::Gyroid, [9, 10, 11], 0.01, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.json");
        write_volume(&p, &vol, Some("gyroid")).unwrap();
        let (back, header) = read_volume(&p).unwrap();
        assert_eq!(back, vol);
        assert_eq!(header.kind.as_deref(), Some("gyroid"));
    }

    #[test]
    fn corrupted_raw_is_detected() {
        let vol = make_volume(VolumeKind::Sphere, [8, 8, 8], 0.0, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.json");
        write_volume(&p, &vol, None).unwrap();
        std::fs::write(dir.path().join("v.raw"), [0u8; 16]).unwrap();
        assert!(read_volume(&p).is_err());
    }
}
