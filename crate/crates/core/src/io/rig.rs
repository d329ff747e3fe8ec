//! Camera rig JSON with a content hash over the camera list.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{Camera, OrbitalRig};

use super::{read_json, sha256_hex, write_json};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigFile {
    /// Generator parameters, when the rig is orbital.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orbital: Option<OrbitalRig>,
    pub cameras: Vec<Camera>,
    pub rig_hash: String,
}

impl RigFile {
    pub fn new(cameras: Vec<Camera>, orbital: Option<OrbitalRig>) -> Self {
        let rig_hash = rig_hash(&cameras);
        Self { orbital, cameras, rig_hash }
    }
}

/// SHA-256 of the compact JSON encoding of the cameras.
pub fn rig_hash(cameras: &[Camera]) -> String {
    sha256_hex(&serde_json::to_vec(cameras).expect("cameras serialize"))
}

pub fn write_rig(path: &Path, rig: &RigFile) -> Result<()> {
    write_json(path, rig)
}

/// Reads a rig and checks its hash against the camera list.
pub fn read_rig(path: &Path) -> Result<RigFile> {
    let rig: RigFile = read_json(path)?;
    let actual = rig_hash(&rig.cameras);
    if actual != rig.rig_hash {
        return Err(Error::ManifestMismatch(format!(
            "{}: rig hash {} does not match cameras ({actual})",
            path.display(),
            rig.rig_hash
        )));
    }
    for c in &rig.cameras {
        c.validate()?;
    }
    Ok(rig)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss::build_orbital_cameras;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn camera_json_is_value_exact(cx in -10.0f64..10.0, r in 0.1f64..50.0, naz in 1usize..9, nel in 1usize..4, res in 8usize..200) {
            let rig = OrbitalRig::new([cx, cx / 3.0, -cx / 7.0], r, naz, nel, res);
            let file = RigFile::new(rig.cameras().unwrap(), Some(rig));
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("rig.json");
            write_rig(&p, &file).unwrap();
            let back = read_rig(&p).unwrap();
            for (a, b) in file.cameras.iter().zip(&back.cameras) {
                let bits = |c: &Camera| -> Vec<u64> {
                    c.position.iter().chain(&c.target).chain(&c.up).chain([&c.fov_y, &c.near, &c.far]).map(|v| v.to_bits()).collect()
                };
                prop_assert_eq!(bits(a), bits(b));
            }
            prop_assert_eq!(back, file);
        }
    }

    #[test]
    fn tampered_rig_is_rejected() {
        let mut file = RigFile::new(build_orbital_cameras([0.0; 3], 2.0, 4, 1, 32).unwrap(), None);
        file.cameras[0].fov_y += 1e-12;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rig.json");
        write_rig(&p, &file).unwrap();
        assert!(matches!(read_rig(&p), Err(Error::ManifestMismatch(_))));
    }
}
