use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A nearshore location at which peak water depth is reported.
///
/// `segment_id` is the shoreline segment closest to the location; datasets
/// store it precomputed (see [`nearest_segment`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoastalLocation {
    pub id: u32,
    pub lon: f64,
    pub lat: f64,
    pub segment_id: usize,
}

/// Polyline of one candidate shoreline segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentGeometry {
    pub segment_id: usize,
    pub vertices: Vec<(f64, f64)>,
}

impl SegmentGeometry {
    pub fn new(segment_id: usize, vertices: Vec<(f64, f64)>) -> Result<Self> {
        if vertices.len() < 2 {
            return Err(Error::Consistency(format!(
                "segment {segment_id} has {} vertices, need at least 2",
                vertices.len()
            )));
        }
        Ok(Self {
            segment_id,
            vertices,
        })
    }

    /// Squared distance from `(x, y)` to the closest point of the polyline.
    pub fn distance_sq(&self, x: f64, y: f64) -> f64 {
        if self.vertices.len() == 1 {
            let (vx, vy) = self.vertices[0];
            return (x - vx).powi(2) + (y - vy).powi(2);
        }
        self.vertices
            .windows(2)
            .map(|w| point_edge_distance_sq((x, y), w[0], w[1]))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Squared distance from `p` to the closed segment `a`–`b`.
pub fn point_edge_distance_sq(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len_sq = dx * dx + dy * dy;
    let t = if len_sq == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len_sq).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    (p.0 - cx).powi(2) + (p.1 - cy).powi(2)
}

/// Id of the segment closest to `(lon, lat)` in raw degree space. Ties go to
/// the smaller segment id.
pub fn nearest_segment_at(lon: f64, lat: f64, segments: &[SegmentGeometry]) -> Result<usize> {
    let mut best: Option<(f64, usize)> = None;
    for seg in segments {
        let d = seg.distance_sq(lon, lat);
        best = match best {
            Some((bd, bid)) if bd < d || (bd == d && bid < seg.segment_id) => Some((bd, bid)),
            _ => Some((d, seg.segment_id)),
        };
    }
    best.map(|(_, id)| id)
        .ok_or_else(|| Error::Consistency("no shoreline segments given".into()))
}

pub fn nearest_segment(location: &CoastalLocation, segments: &[SegmentGeometry]) -> Result<usize> {
    nearest_segment_at(location.lon, location.lat, segments)
}
