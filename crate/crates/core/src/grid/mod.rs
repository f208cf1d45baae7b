//! Conversion between per-location vectors and 2-D grids.
//!
//! [`GridIndexMap`] assigns every coastal location a unique cell of an
//! `H x W` raster. Scenarios become [`SusceptibilityMap`]s over `{-1, 0, +1}`
//! and depth vectors become masked [`InundationMap`]s.

mod binary;
mod geometry;

pub use binary::{decode_inundation, encode_inundation_bytes, GRID_MAGIC, GRID_VERSION};
pub use geometry::{
    nearest_segment, nearest_segment_at, point_edge_distance_sq, CoastalLocation,
    SegmentGeometry,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::ProtectionScenario;

/// Row-major `h x w` raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(h: usize, w: usize, value: T) -> Self {
        Self {
            h,
            w,
            data: vec![value; h * w],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> &T {
        &self.data[i * self.w + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: T) {
        self.data[i * self.w + j] = value;
    }
}

/// Depths at the `d_y` locations, ordered by ascending location id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthVector {
    pub values: Vec<f32>,
}

impl DepthVector {
    pub fn new(values: Vec<f32>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| f64::from(v)).collect()
    }
}

/// Input raster: +1 near protected shoreline, -1 near unprotected, 0 elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct SusceptibilityMap {
    pub grid: Grid<i8>,
}

impl SusceptibilityMap {
    pub fn h(&self) -> usize {
        self.grid.h
    }

    pub fn w(&self) -> usize {
        self.grid.w
    }

    pub fn nonzero_count(&self) -> usize {
        self.grid.data.iter().filter(|&&v| v != 0).count()
    }
}

/// Target raster of non-negative depths with the validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct InundationMap {
    pub depths: Grid<f32>,
    pub mask: Grid<bool>,
}

impl InundationMap {
    pub fn h(&self) -> usize {
        self.depths.h
    }

    pub fn w(&self) -> usize {
        self.depths.w
    }

    pub fn valid_count(&self) -> usize {
        self.mask.data.iter().filter(|&&m| m).count()
    }
}

/// Injective map from location id to grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridIndexMap {
    pub h: usize,
    pub w: usize,
    /// `(location id, (row, col))`, sorted by id.
    entries: Vec<(u32, (usize, usize))>,
}

impl GridIndexMap {
    /// Builds a map from explicit entries, checking bounds and injectivity.
    pub fn from_entries(h: usize, w: usize, mut entries: Vec<(u32, (usize, usize))>) -> Result<Self> {
        entries.sort_by_key(|e| e.0);
        let mut taken = vec![false; h * w];
        for (k, &(id, (i, j))) in entries.iter().enumerate() {
            if k > 0 && entries[k - 1].0 == id {
                return Err(Error::Consistency(format!("duplicate location id {id}")));
            }
            if i >= h || j >= w {
                return Err(Error::Consistency(format!(
                    "location {id} maps to ({i}, {j}) outside {h}x{w}"
                )));
            }
            if std::mem::replace(&mut taken[i * w + j], true) {
                return Err(Error::Consistency(format!(
                    "cell ({i}, {j}) assigned twice (location {id})"
                )));
            }
        }
        Ok(Self { h, w, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(u32, (usize, usize))] {
        &self.entries
    }

    pub fn cell_of(&self, id: u32) -> Option<(usize, usize)> {
        self.entries
            .binary_search_by_key(&id, |e| e.0)
            .ok()
            .map(|k| self.entries[k].1)
    }

    /// Row-major validity mask.
    pub fn mask(&self) -> Grid<bool> {
        let mut mask = Grid::filled(self.h, self.w, false);
        for &(_, (i, j)) in &self.entries {
            mask.set(i, j, true);
        }
        mask
    }

    /// Flat row-major cell index per entry, in id order.
    pub fn flat_indices(&self) -> Vec<usize> {
        self.entries.iter().map(|&(_, (i, j))| i * self.w + j).collect()
    }
}

fn bin(value: f64, min: f64, max: f64, bins: usize) -> usize {
    if max <= min {
        return 0;
    }
    let t = (value - min) / (max - min);
    ((t * bins as f64).floor() as isize).clamp(0, bins as isize - 1) as usize
}

/// Nearest free cell to `(i, j)` by Euclidean grid distance; ties resolve to
/// the smaller row, then the smaller column.
fn nearest_free(taken: &[bool], h: usize, w: usize, i: usize, j: usize) -> Option<(usize, usize)> {
    let (i0, j0) = (i as isize, j as isize);
    let mut best: Option<(isize, usize, usize)> = None;
    let max_r = h.max(w) as isize;
    for r in 1..=max_r {
        if let Some((d2, _, _)) = best {
            if r * r > d2 {
                break;
            }
        }
        for di in -r..=r {
            for dj in -r..=r {
                if di.abs() != r && dj.abs() != r {
                    continue;
                }
                let (ci, cj) = (i0 + di, j0 + dj);
                if ci < 0 || cj < 0 || ci >= h as isize || cj >= w as isize {
                    continue;
                }
                let (ci, cj) = (ci as usize, cj as usize);
                if taken[ci * w + cj] {
                    continue;
                }
                let d2 = di * di + dj * dj;
                let better = match best {
                    None => true,
                    Some((bd, bi, bj)) => (d2, ci, cj) < (bd, bi, bj),
                };
                if better {
                    best = Some((d2, ci, cj));
                }
            }
        }
    }
    best.map(|(_, i, j)| (i, j))
}

/// Discretizes the locations' bounding box into `h` latitude rows (row 0 is
/// the northernmost) and `w` longitude columns.
///
/// Locations are placed in ascending id order; a location whose cell is
/// already occupied moves to the nearest free cell.
pub fn build_index_map(locations: &[CoastalLocation], h: usize, w: usize) -> Result<GridIndexMap> {
    if h < 2 || w < 2 {
        return Err(Error::Config(format!("grid must be at least 2x2, got {h}x{w}")));
    }
    if locations.len() > h * w {
        return Err(Error::Capacity(format!(
            "{} locations do not fit in a {h}x{w} grid",
            locations.len()
        )));
    }
    let (mut min_lon, mut max_lon) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_lat, mut max_lat) = (f64::INFINITY, f64::NEG_INFINITY);
    for loc in locations {
        min_lon = min_lon.min(loc.lon);
        max_lon = max_lon.max(loc.lon);
        min_lat = min_lat.min(loc.lat);
        max_lat = max_lat.max(loc.lat);
    }

    let mut order: Vec<&CoastalLocation> = locations.iter().collect();
    order.sort_by_key(|l| l.id);

    let mut taken = vec![false; h * w];
    let mut entries = Vec::with_capacity(locations.len());
    for loc in order {
        let j = bin(loc.lon, min_lon, max_lon, w);
        let i = bin(max_lat - loc.lat + min_lat, min_lat, max_lat, h);
        let (i, j) = if taken[i * w + j] {
            nearest_free(&taken, h, w, i, j)
                .ok_or_else(|| Error::Capacity("grid is full".into()))?
        } else {
            (i, j)
        };
        taken[i * w + j] = true;
        entries.push((loc.id, (i, j)));
    }
    GridIndexMap::from_entries(h, w, entries)
}

/// Rasterizes a protection scenario: each mapped location's cell gets +1 if
/// its nearest segment is protected, -1 otherwise.
pub fn encode_susceptibility(
    scenario: &ProtectionScenario,
    locations: &[CoastalLocation],
    index_map: &GridIndexMap,
) -> Result<SusceptibilityMap> {
    let mut grid = Grid::filled(index_map.h, index_map.w, 0i8);
    for loc in locations {
        if loc.segment_id >= scenario.d_x() {
            return Err(Error::Consistency(format!(
                "location {} references segment {} but the scenario has {} segments",
                loc.id,
                loc.segment_id,
                scenario.d_x()
            )));
        }
        let (i, j) = index_map.cell_of(loc.id).ok_or_else(|| {
            Error::Consistency(format!("location {} missing from the index map", loc.id))
        })?;
        grid.set(i, j, if scenario.is_protected(loc.segment_id) { 1 } else { -1 });
    }
    Ok(SusceptibilityMap { grid })
}

pub fn encode_inundation(depths: &DepthVector, index_map: &GridIndexMap) -> Result<InundationMap> {
    if depths.len() != index_map.len() {
        return Err(Error::Shape(format!(
            "depth vector has {} entries, index map has {}",
            depths.len(),
            index_map.len()
        )));
    }
    let mut grid = Grid::filled(index_map.h, index_map.w, 0.0f32);
    for (&v, &(_, (i, j))) in depths.values.iter().zip(index_map.entries()) {
        grid.set(i, j, v);
    }
    Ok(InundationMap {
        depths: grid,
        mask: index_map.mask(),
    })
}

/// Reads the depths back at the mapped cells. Values are not clamped.
pub fn extract_depths(map: &Grid<f32>, index_map: &GridIndexMap) -> Result<DepthVector> {
    if map.h != index_map.h || map.w != index_map.w {
        return Err(Error::Shape(format!(
            "grid is {}x{}, index map expects {}x{}",
            map.h, map.w, index_map.h, index_map.w
        )));
    }
    Ok(DepthVector::new(
        index_map
            .entries()
            .iter()
            .map(|&(_, (i, j))| *map.get(i, j))
            .collect(),
    ))
}
