use serde_json::json;

use super::Artifact;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::grid::{CoastalLocation, DepthVector};
use crate::scenario::ProtectionScenario;

/// Zero where the nearest segment is protected, a dataset mean elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct NaivePredictor {
    segment_of: Vec<usize>,
    /// One value per location; all equal in the global-mean form.
    means: Vec<f64>,
    per_location: bool,
}

impl NaivePredictor {
    /// Fits on `samples`. With `per_location` each location uses its own
    /// mean instead of the single global one.
    pub fn fit(samples: &[Sample], locations: &[CoastalLocation], per_location: bool) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Config("naive predictor needs at least one sample".into()));
        }
        let d_y = locations.len();
        let mut sums = vec![0.0; d_y];
        for s in samples {
            if s.depths.len() != d_y {
                return Err(Error::Shape(format!("{} depths for {d_y} locations", s.depths.len())));
            }
            for (acc, &v) in sums.iter_mut().zip(&s.depths.values) {
                *acc += v as f64;
            }
        }
        let n = samples.len() as f64;
        let means = if per_location {
            sums.iter().map(|s| s / n).collect()
        } else {
            vec![sums.iter().sum::<f64>() / (n * d_y as f64); d_y]
        };
        Ok(Self::from_parts(locations.iter().map(|l| l.segment_id).collect(), means, per_location))
    }

    pub fn from_parts(segment_of: Vec<usize>, means: Vec<f64>, per_location: bool) -> Self {
        Self {
            segment_of,
            means,
            per_location,
        }
    }

    pub fn global_mean(&self) -> Option<f64> {
        (!self.per_location).then(|| self.means.first().copied().unwrap_or(0.0))
    }

    pub fn predict(&self, scenario: &ProtectionScenario) -> Result<DepthVector> {
        let mut out = Vec::with_capacity(self.means.len());
        for (&s, &m) in self.segment_of.iter().zip(&self.means) {
            if s >= scenario.d_x() {
                return Err(Error::Consistency(format!(
                    "segment {s} outside a {}-bit scenario",
                    scenario.d_x()
                )));
            }
            out.push(if scenario.is_protected(s) { 0.0 } else { m as f32 });
        }
        Ok(DepthVector::new(out))
    }

    pub fn to_artifact(&self) -> Artifact {
        let mut a = Artifact::new("naive", json!({ "per_location": self.per_location }));
        a.push_vector("segment_of", &self.segment_of.iter().map(|&s| s as f64).collect::<Vec<_>>());
        a.push_vector("means", &self.means);
        a
    }

    pub fn from_artifact(a: &Artifact) -> Result<Self> {
        let per_location = a.meta["per_location"].as_bool().unwrap_or(false);
        let segs = a.vector("segment_of")?.iter().map(|&v| v as usize).collect();
        Ok(Self::from_parts(segs, a.vector("means")?.iter().copied().collect(), per_location))
    }
}
