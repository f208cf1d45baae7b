use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    GlorotNormal,
    Zeros,
}

impl FromStr for Init {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "glorot_normal" => Ok(Self::GlorotNormal),
            "zeros" => Ok(Self::Zeros),
            other => Err(Error::Config(format!("unknown initializer '{other}'"))),
        }
    }
}

impl fmt::Display for Init {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::GlorotNormal => "glorot_normal",
            Self::Zeros => "zeros",
        })
    }
}

/// Truncated-normal Glorot initialization over `(kh, kw, in, out)` kernels:
/// samples beyond two standard deviations are redrawn, and the scale is
/// corrected for the truncation so the variance is `2 / (fan_in + fan_out)`.
pub fn glorot_normal<T: Scalar, R: Rng + ?Sized>(shape: [usize; 4], rng: &mut R) -> Tensor<T> {
    let receptive = shape[0] * shape[1];
    let fan_in = receptive * shape[2];
    let fan_out = receptive * shape[3];
    let std = (2.0 / (fan_in + fan_out) as f64).sqrt() / 0.879_625_661_034_239_8;
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| loop {
            let z: f64 = rng.sample(StandardNormal);
            if z.abs() <= 2.0 {
                break T::from_f64_lossy(z * std);
            }
        })
        .collect();
    Tensor::from_vec(shape, data).expect("shape")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub init: Init,
    pub trainable: bool,
}

/// Named parameter tensors in creation order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<T>, init: Init) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter '{name}'")));
        }
        let id = self.entries.len();
        self.index.insert(name.to_string(), id);
        self.entries.push(ParamEntry {
            name: name.to_string(),
            tensor,
            init,
            trainable: true,
        });
        Ok(id)
    }

    pub fn init<R: Rng + ?Sized>(&mut self, name: &str, shape: [usize; 4], init: Init, rng: &mut R) -> Result<usize> {
        let tensor = match init {
            Init::GlorotNormal => glorot_normal(shape, rng),
            Init::Zeros => Tensor::zeros(shape),
        };
        self.insert(name, tensor, init)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|i| &self.entries[i].tensor)
    }

    pub fn tensor(&self, id: usize) -> &Tensor<T> {
        &self.entries[id].tensor
    }

    pub fn tensor_mut(&mut self, id: usize) -> &mut Tensor<T> {
        &mut self.entries[id].tensor
    }

    pub fn set_trainable(&mut self, id: usize, trainable: bool) {
        self.entries[id].trainable = trainable;
    }

    /// Total number of trainable scalars.
    pub fn count(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.tensor.len()).sum()
    }

    /// Graph leaves for every entry, in order.
    pub fn vars(&self, requires_grad: bool) -> Vec<Var<T>> {
        self.entries
            .iter()
            .map(|e| {
                if requires_grad && e.trainable {
                    Var::param(e.tensor.clone())
                } else {
                    Var::constant(e.tensor.clone())
                }
            })
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    tensor: e.tensor.cast(),
                    init: e.init,
                    trainable: e.trainable,
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|e| e.tensor.is_finite())
    }
}
