//! Binary checkpoint files.
//!
//! ```text
//! [8]  magic "MXSNCKPT"
//! [8]  manifest length, u64 little-endian
//! [n]  manifest, UTF-8 JSON
//! [..] parameter data, little-endian, tensors in manifest order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetworkSpec, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{DType, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MXSNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub network: NetworkSpec,
    pub dtype: DType,
    pub seed: u64,
    pub params: Vec<ParamEntry>,
}

pub fn save_checkpoint<F: Scalar>(
    path: impl AsRef<Path>,
    net: &NetworkSpec,
    params: &ParamStore<F>,
    seed: u64,
) -> Result<()> {
    let path = path.as_ref();
    params.check_against(net)?;
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_VERSION,
        network: net.clone(),
        dtype: F::DTYPE,
        seed,
        params: params
            .iter()
            .map(|(name, t)| ParamEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| Error::json(path, e))?;
    let mut bytes = Vec::with_capacity(16 + json.len() + params.total() * F::DTYPE.size_of());
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for t in params.tensors() {
        for &v in t.data() {
            v.write_le(&mut bytes);
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<F: Scalar>(
    path: impl AsRef<Path>,
) -> Result<(CheckpointManifest, ParamStore<F>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(8)]).into_owned(),
        });
    }
    let json_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let body = 16u64
        .checked_add(json_len)
        .filter(|&end| end <= bytes.len() as u64)
        .ok_or(Error::LengthMismatch {
            path: path.into(),
            expected: 16 + json_len,
            actual: bytes.len() as u64,
        })? as usize;
    let manifest: CheckpointManifest =
        serde_json::from_slice(&bytes[16..body]).map_err(|e| Error::json(path, e))?;
    if manifest.format_version != CHECKPOINT_VERSION {
        return Err(Error::Unsupported {
            path: path.into(),
            field: "format_version",
            value: manifest.format_version.to_string(),
        });
    }
    if manifest.dtype != F::DTYPE {
        return Err(Error::Unsupported {
            path: path.into(),
            field: "dtype",
            value: format!("{:?}", manifest.dtype),
        });
    }
    let width = F::DTYPE.size_of();
    let scalars: usize = manifest
        .params
        .iter()
        .map(|p| p.shape.iter().product::<usize>())
        .sum();
    let expected = (body + scalars * width) as u64;
    if expected != bytes.len() as u64 {
        return Err(Error::LengthMismatch {
            path: path.into(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    let mut store = ParamStore::new();
    let mut offset = body;
    for entry in &manifest.params {
        let n: usize = entry.shape.iter().product();
        let data = bytes[offset..offset + n * width]
            .chunks_exact(width)
            .map(F::read_le)
            .collect();
        offset += n * width;
        store.insert(entry.name.clone(), Tensor::from_vec(&entry.shape, data)?)?;
    }
    store.check_against(&manifest.network)?;
    Ok((manifest, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::MixedSnConfig;
    use crate::rng::Rng;

    fn tiny() -> NetworkSpec {
        NetworkSpec::mixedsn(MixedSnConfig::tiny(3, 8, 9)).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let net = tiny();
        let mut store = ParamStore::<f32>::init(&net, &mut Rng::new(9));
        store.tensors_mut()[0].data_mut()[0] = -0.0;
        store.tensors_mut()[0].data_mut()[1] = f32::MIN_POSITIVE / 2.0;
        save_checkpoint(&path, &net, &store, 9).unwrap();
        let (manifest, back) = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(manifest.seed, 9);
        assert_eq!(manifest.network, net);
        for (a, b) in store.tensors().iter().zip(back.tensors()) {
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        let first = std::fs::read(&path).unwrap();
        save_checkpoint(&path, &manifest.network, &back, manifest.seed).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let net = tiny();
        let store = ParamStore::<f32>::init(&net, &mut Rng::new(1));
        save_checkpoint(&path, &net, &store, 1).unwrap();
        let good = std::fs::read(&path).unwrap();

        std::fs::write(&path, &good[..good.len() - 1]).unwrap();
        assert!(matches!(
            load_checkpoint::<f32>(&path),
            Err(Error::LengthMismatch { .. })
        ));

        let mut bad = good.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(
            load_checkpoint::<f32>(&path),
            Err(Error::BadMagic { .. })
        ));

        std::fs::write(&path, &good).unwrap();
        assert!(matches!(
            load_checkpoint::<f64>(&path),
            Err(Error::Unsupported { field: "dtype", .. })
        ));
    }
}
