//! Named-parameter persistence: a JSON manifest plus a binary f64 payload.
//! Loading then saving reproduces parameters bit-exactly.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Mat, ParamSet};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PAYLOAD_FILE: &str = "params.bin";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    /// Element (not byte) offset into the payload.
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

/// Write `params` under `dir` (created if needed) with arbitrary `meta` JSON
/// carried in the manifest.
pub fn save_params(dir: &Path, params: &ParamSet, meta: serde_json::Value) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tensors = Vec::with_capacity(params.len());
    let mut payload: Vec<u8> = Vec::new();
    let mut offset = 0usize;
    for (name, mat) in params {
        tensors.push(TensorEntry {
            name: name.clone(),
            rows: mat.rows,
            cols: mat.cols,
            offset,
        });
        for v in &mat.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        offset += mat.data.len();
    }
    let manifest = Manifest {
        format_version: 1,
        tensors,
        meta,
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
    .map_err(|e| Error::io(&manifest_path, e))?;
    let payload_path = dir.join(PAYLOAD_FILE);
    let mut f = std::fs::File::create(&payload_path).map_err(|e| Error::io(&payload_path, e))?;
    f.write_all(&payload).map_err(|e| Error::io(&payload_path, e))?;
    Ok(())
}

/// Read a parameter set and its manifest meta back from `dir`.
pub fn load_params(dir: &Path) -> Result<(ParamSet, serde_json::Value)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest_json = std::fs::read_to_string(&manifest_path)
        .map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&manifest_json)
        .map_err(|e| Error::Checkpoint {
            message: format!("bad manifest: {e}"),
            names: Vec::new(),
        })?;
    let payload_path = dir.join(PAYLOAD_FILE);
    let mut payload = Vec::new();
    std::fs::File::open(&payload_path)
        .map_err(|e| Error::io(&payload_path, e))?
        .read_to_end(&mut payload)
        .map_err(|e| Error::io(&payload_path, e))?;

    let mut params = ParamSet::new();
    for t in &manifest.tensors {
        let n = t.rows * t.cols;
        let start = t.offset * 8;
        let end = start + n * 8;
        if end > payload.len() {
            return Err(Error::Checkpoint {
                message: "payload truncated".into(),
                names: vec![t.name.clone()],
            });
        }
        let data: Vec<f64> = payload[start..end]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        if params.insert(t.name.clone(), Mat::from_vec(t.rows, t.cols, data)).is_some() {
            return Err(Error::Checkpoint {
                message: "duplicate tensor name".into(),
                names: vec![t.name.clone()],
            });
        }
    }
    Ok((params, manifest.meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut params = ParamSet::new();
        params.insert("a.weight".into(), Mat::gaussian(3, 4, 0.0, 1.0, &mut rng));
        params.insert("a.bias".into(), Mat::gaussian(1, 4, 0.0, 1.0, &mut rng));
        let dir = tempfile::tempdir().unwrap();
        let meta = serde_json::json!({"seed": 7});
        save_params(dir.path(), &params, meta.clone()).unwrap();
        let (loaded, loaded_meta) = load_params(dir.path()).unwrap();
        assert_eq!(loaded, params);
        assert_eq!(loaded_meta, meta);

        // Save the loaded set again: byte-identical payload.
        let dir2 = tempfile::tempdir().unwrap();
        save_params(dir2.path(), &loaded, loaded_meta).unwrap();
        let a = std::fs::read(dir.path().join(PAYLOAD_FILE)).unwrap();
        let b = std::fs::read(dir2.path().join(PAYLOAD_FILE)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_dir_is_an_io_error() {
        assert!(load_params(Path::new("/nonexistent/ckpt")).is_err());
    }
}
