use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::container::{self, checksum_hex, decode_f64, encode_f64, Dtype, FORMAT_VERSION};
use crate::adapter::{Branch, LowRankAdapter};
use crate::error::Result;
use crate::linalg::Matrix;

pub const DOWN_FILE: &str = "down.bin";
pub const UP_FILE: &str = "up.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterManifest {
    pub format_version: u32,
    pub dtype: String,
    pub dim: usize,
    pub rank: usize,
    pub alpha: f64,
    pub branch: Branch,
    pub checksums: BTreeMap<String, String>,
}

/// Writes the adapter in double precision so snapshots reload bit-exactly.
pub fn save_adapter(adapter: &LowRankAdapter, dir: &Path) -> Result<()> {
    container::ensure_dir(dir)?;
    let mut checksums = BTreeMap::new();
    for (name, m) in [(DOWN_FILE, &adapter.down), (UP_FILE, &adapter.up)] {
        let sum = container::write_payload(dir, name, &encode_f64(m.as_slice()))?;
        checksums.insert(name.to_string(), checksum_hex(sum));
    }
    container::write_manifest(
        dir,
        &AdapterManifest {
            format_version: FORMAT_VERSION,
            dtype: Dtype::F64Le.tag().into(),
            dim: adapter.dim(),
            rank: adapter.rank(),
            alpha: adapter.alpha,
            branch: adapter.branch,
            checksums,
        },
    )?;
    Ok(())
}

pub fn load_adapter(dir: &Path) -> Result<LowRankAdapter> {
    let m: AdapterManifest = container::read_manifest(dir)?;
    container::expect_dtype(dir, &m.dtype, Dtype::F64Le)?;
    let len = m.dim * m.rank * Dtype::F64Le.width();
    let down = container::read_payload(dir, DOWN_FILE, len, &m.checksums)?;
    let up = container::read_payload(dir, UP_FILE, len, &m.checksums)?;
    Ok(LowRankAdapter {
        down: Matrix::from_vec(m.rank, m.dim, decode_f64(&down))?,
        up: Matrix::from_vec(m.dim, m.rank, decode_f64(&up))?,
        alpha: m.alpha,
        branch: m.branch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut a = LowRankAdapter::init(6, 2, 0.5, Branch::Both, &mut rng).unwrap();
        let p: Vec<f64> = a.params().iter().map(|v| v * 1.1 + 1e-3).collect();
        a.set_params(&p).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_adapter(&a, dir.path()).unwrap();
        assert_eq!(load_adapter(dir.path()).unwrap(), a);
    }

    #[test]
    fn dataset_manifest_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let a = LowRankAdapter::zeros(3, 1, 1.0, Branch::Visual);
        save_adapter(&a, dir.path()).unwrap();
        let path = dir.path().join("manifest");
        let text = std::fs::read_to_string(&path).unwrap().replace("f64le", "f32le");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(load_adapter(dir.path()), Err(Error::Manifest { .. })));
    }
}
