//! On-disk checkpoints: `manifest.json` plus one little-endian `f32` blob per
//! tensor.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Init, ParamStore, Tensor};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: [usize; 4],
    pub init: Init,
    pub trainable: bool,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: serde_json::Value,
    pub tensors: Vec<TensorRecord>,
}

fn blob_name(i: usize, name: &str) -> String {
    let clean: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '-' })
        .collect();
    format!("{i:03}_{clean}.f32")
}

fn to_bytes(t: &Tensor<f32>) -> Vec<u8> {
    t.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Writes `store` with an attached `config` and returns the fingerprint.
pub fn save(dir: &Path, config: &serde_json::Value, store: &ParamStore<f32>) -> Result<String> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tensors = Vec::with_capacity(store.len());
    let mut blobs = Vec::with_capacity(store.len());
    for (i, e) in store.entries().iter().enumerate() {
        let file = blob_name(i, &e.name);
        let bytes = to_bytes(&e.tensor);
        let path = dir.join(&file);
        fs::write(&path, &bytes).map_err(|err| Error::io(&path, err))?;
        blobs.push(bytes);
        tensors.push(TensorRecord {
            name: e.name.clone(),
            shape: e.tensor.shape(),
            init: e.init,
            trainable: e.trainable,
            file,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: config.clone(),
        tensors,
    };
    let text = serde_json::to_vec_pretty(&manifest)?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
    Ok(digest(&text, &blobs))
}

fn digest(manifest: &[u8], blobs: &[Vec<u8>]) -> String {
    let mut h = Sha256::new();
    h.update(manifest);
    for b in blobs {
        h.update(b);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub struct Loaded {
    pub config: serde_json::Value,
    pub params: ParamStore<f32>,
    pub fingerprint: String,
}

pub fn load(dir: &Path) -> Result<Loaded> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_slice(&text)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::dataset(
            &path,
            format!("unsupported checkpoint version {}", manifest.format_version),
        ));
    }
    let mut params = ParamStore::new();
    let mut blobs = Vec::with_capacity(manifest.tensors.len());
    for rec in &manifest.tensors {
        let bp = dir.join(&rec.file);
        let bytes = fs::read(&bp).map_err(|e| Error::io(&bp, e))?;
        let expect = rec.shape.iter().product::<usize>() * 4;
        if bytes.len() != expect {
            return Err(Error::dataset(
                &bp,
                format!("{} bytes, expected {expect} for {:?}", bytes.len(), rec.shape),
            ));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let id = params.insert(&rec.name, Tensor::from_vec(rec.shape, data)?, rec.init)?;
        if !rec.trainable {
            params.set_trainable(id, false);
        }
        blobs.push(bytes);
    }
    Ok(Loaded {
        config: manifest.config,
        params,
        fingerprint: digest(&text, &blobs),
    })
}

/// Fingerprint of a checkpoint directory without parsing tensors.
pub fn fingerprint(dir: &Path) -> Result<String> {
    Ok(load(dir)?.fingerprint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn byte_exact_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f32>::new();
        store.init("enc/conv.w", [3, 3, 1, 4], Init::GlorotNormal, &mut rng).unwrap();
        store.init("enc/conv.b", [1, 1, 1, 4], Init::Zeros, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let cfg = serde_json::json!({"F": 4});
        let fp = save(dir.path(), &cfg, &store).unwrap();
        let loaded = load(dir.path()).unwrap();
        assert_eq!(loaded.params, store);
        assert_eq!(loaded.config, cfg);
        assert_eq!(loaded.fingerprint, fp);
        let dir2 = tempfile::tempdir().unwrap();
        assert_eq!(save(dir2.path(), &cfg, &loaded.params).unwrap(), fp);
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let mut store = ParamStore::<f32>::new();
        store.insert("w", Tensor::full([1, 1, 2, 2], 1.5), Init::Zeros).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save(dir.path(), &serde_json::Value::Null, &store).unwrap();
        let blob = dir.path().join(blob_name(0, "w"));
        fs::write(&blob, [0u8; 6]).unwrap();
        assert!(matches!(load(dir.path()), Err(Error::Dataset { .. })));
    }
}
