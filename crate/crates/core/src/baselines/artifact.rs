//! Persistence for fitted baselines: `manifest.json` with scalar metadata and
//! one little-endian `f32` blob per array.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArrayRecord {
    name: String,
    shape: Vec<usize>,
    file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    method: String,
    meta: serde_json::Value,
    arrays: Vec<ArrayRecord>,
}

/// In-memory form of a saved model.
#[derive(Debug, Clone, Default)]
pub struct Artifact {
    pub method: String,
    pub meta: serde_json::Value,
    arrays: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl Artifact {
    pub fn new(method: &str, meta: serde_json::Value) -> Self {
        Self {
            method: method.to_string(),
            meta,
            arrays: Vec::new(),
        }
    }

    pub fn push_matrix(&mut self, name: &str, m: &DMatrix<f64>) {
        let mut data = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            data.extend(m.row(r).iter());
        }
        self.arrays.push((name.to_string(), vec![m.nrows(), m.ncols()], data));
    }

    pub fn push_vector(&mut self, name: &str, v: &[f64]) {
        self.arrays.push((name.to_string(), vec![v.len()], v.to_vec()));
    }

    fn find(&self, name: &str) -> Result<&(String, Vec<usize>, Vec<f64>)> {
        self.arrays
            .iter()
            .find(|a| a.0 == name)
            .ok_or_else(|| Error::Config(format!("{} artifact lacks array '{name}'", self.method)))
    }

    pub fn matrix(&self, name: &str) -> Result<DMatrix<f64>> {
        let (_, shape, data) = self.find(name)?;
        if shape.len() != 2 {
            return Err(Error::Shape(format!("array '{name}' is not a matrix")));
        }
        Ok(DMatrix::from_row_slice(shape[0], shape[1], data))
    }

    pub fn vector(&self, name: &str) -> Result<DVector<f64>> {
        let (_, _, data) = self.find(name)?;
        Ok(DVector::from_column_slice(data))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut arrays = Vec::new();
        for (i, (name, shape, data)) in self.arrays.iter().enumerate() {
            let file = format!("{i:03}_{name}.f32");
            let bytes: Vec<u8> = data.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
            let path = dir.join(&file);
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            arrays.push(ArrayRecord {
                name: name.clone(),
                shape: shape.clone(),
                file,
            });
        }
        let manifest = Manifest {
            method: self.method.clone(),
            meta: self.meta.clone(),
            arrays,
        };
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_slice(&text)?;
        let mut arrays = Vec::new();
        for rec in manifest.arrays {
            let p = dir.join(&rec.file);
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            let len: usize = rec.shape.iter().product();
            if bytes.len() != 4 * len {
                return Err(Error::dataset(&p, format!("{} bytes for shape {:?}", bytes.len(), rec.shape)));
            }
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            arrays.push((rec.name, rec.shape, data));
        }
        Ok(Self {
            method: manifest.method,
            meta: manifest.meta,
            arrays,
        })
    }
}
