//! Cutout augmentation of susceptibility maps.
//!
//! Each augmented copy zeroes `n_patches` square patches at uniformly random
//! centers. Targets are never touched.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{InundationMap, SusceptibilityMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CutoutConfig {
    pub n_patches: usize,
    pub patch_size: usize,
    /// Augmented copies per original; originals are kept as well.
    pub m: usize,
    pub seed: u64,
}

impl Default for CutoutConfig {
    fn default() -> Self {
        Self {
            n_patches: 2,
            patch_size: 60,
            m: 19,
            seed: 0,
        }
    }
}

impl CutoutConfig {
    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        if self.n_patches == 0 {
            return Err(Error::Config("augment.n_patches must be at least 1".into()));
        }
        if self.patch_size == 0 || self.patch_size > h.min(w) {
            return Err(Error::Config(format!(
                "augment.patch_size {} must be in 1..={}",
                self.patch_size,
                h.min(w)
            )));
        }
        Ok(())
    }

    /// Independent stream for copy `copy` of original `index`.
    pub fn stream(&self, index: usize, copy: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((index as u64) << 32) | copy as u64);
        rng
    }
}

/// Zeroes a `size x size` square covering rows `[ci - size/2, ci - size/2 + size)`
/// (and likewise for columns), clipped to the grid.
pub fn zero_patch(map: &mut SusceptibilityMap, ci: usize, cj: usize, size: usize) {
    let (h, w) = (map.h() as isize, map.w() as isize);
    let half = (size / 2) as isize;
    let (r0, c0) = (ci as isize - half, cj as isize - half);
    for i in r0.max(0)..(r0 + size as isize).min(h) {
        for j in c0.max(0)..(c0 + size as isize).min(w) {
            map.grid.set(i as usize, j as usize, 0);
        }
    }
}

/// Returns a copy of `map` with `cfg.n_patches` random patches zeroed.
pub fn cutout<R: Rng>(map: &SusceptibilityMap, cfg: &CutoutConfig, rng: &mut R) -> SusceptibilityMap {
    let mut out = map.clone();
    for _ in 0..cfg.n_patches {
        let ci = rng.gen_range(0..map.h());
        let cj = rng.gen_range(0..map.w());
        zero_patch(&mut out, ci, cj, cfg.patch_size);
    }
    out
}

/// Copy `copy` (1-based; 0 is the original) of the `index`-th input.
pub fn augmented_input(
    map: &SusceptibilityMap,
    cfg: &CutoutConfig,
    index: usize,
    copy: usize,
) -> SusceptibilityMap {
    if copy == 0 {
        return map.clone();
    }
    cutout(map, cfg, &mut cfg.stream(index, copy))
}

pub type TrainingPair = (SusceptibilityMap, Arc<InundationMap>);

/// Expands `n` pairs into `(m + 1) * n`: each original followed by its `m`
/// cutout copies, all sharing the original target.
pub fn augment_dataset(pairs: &[TrainingPair], cfg: &CutoutConfig) -> Vec<TrainingPair> {
    let mut out = Vec::with_capacity(pairs.len() * (cfg.m + 1));
    for (index, (x, y)) in pairs.iter().enumerate() {
        for copy in 0..=cfg.m {
            out.push((augmented_input(x, cfg, index, copy), Arc::clone(y)));
        }
    }
    out
}
