//! Comparison models operating on scenario bit vectors.

mod artifact;
mod kriging;
mod linear;
mod naive;
mod pca;
mod svr;

use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;

pub use artifact::Artifact;
pub use kriging::{fit_kriging_pca, KrigingComponent, KrigingOptions, KrigingPcaModel};
pub use linear::{fit_lasso_poly, fit_linear, poly_design, poly_dim, poly_expand, LassoDiagnostics, LassoOptions, LassoPolyModel, LinearModel};
pub use naive::NaivePredictor;
pub use pca::{fit_pca, PcaBasis, DEFAULT_VARIANCE_THRESHOLD};
pub use svr::{fit_svr_per_location, SvrEnsemble, SvrOptions};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::grid::{CoastalLocation, DepthVector};
use crate::scenario::ProtectionScenario;

/// Elementwise `max(0, v)`.
pub fn clip_negative(pred: &DepthVector) -> DepthVector {
    DepthVector::new(pred.values.iter().map(|&v| v.max(0.0)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Naive,
    Linear,
    Lasso,
    Svr,
    Kriging,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Naive, Method::Linear, Method::Lasso, Method::Svr, Method::Kriging];

    pub fn name(self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::Linear => "linear",
            Method::Lasso => "lasso",
            Method::Svr => "svr",
            Method::Kriging => "kriging",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown baseline method '{s}'")))
    }
}

/// Scenario bits as an `n x d_x` matrix.
pub fn scenario_matrix(samples: &[Sample]) -> DMatrix<f64> {
    let d = samples.first().map_or(0, |s| s.scenario.d_x());
    DMatrix::from_fn(samples.len(), d, |r, c| if samples[r].scenario.is_protected(c) { 1.0 } else { 0.0 })
}

pub fn target_matrix(samples: &[Sample]) -> DMatrix<f64> {
    let d = samples.first().map_or(0, |s| s.depths.len());
    DMatrix::from_fn(samples.len(), d, |r, c| samples[r].depths.values[c] as f64)
}

fn bits(s: &ProtectionScenario) -> Vec<f64> {
    s.as_features()
}

/// Any fitted baseline.
#[derive(Debug, Clone)]
pub enum Baseline {
    Naive(NaivePredictor),
    Linear(LinearModel),
    Lasso(LassoPolyModel),
    Svr(SvrEnsemble),
    Kriging(KrigingPcaModel),
}

impl Baseline {
    /// Fits with default options.
    pub fn fit(method: Method, samples: &[Sample], locations: &[CoastalLocation]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Config("no training samples".into()));
        }
        let x = scenario_matrix(samples);
        let y = target_matrix(samples);
        Ok(match method {
            Method::Naive => Baseline::Naive(NaivePredictor::fit(samples, locations, false)?),
            Method::Linear => Baseline::Linear(fit_linear(&x, &y)?),
            Method::Lasso => Baseline::Lasso(fit_lasso_poly(&x, &y, &LassoOptions::default())?.0),
            Method::Svr => Baseline::Svr(fit_svr_per_location(&x, &y, &SvrOptions::default())?),
            Method::Kriging => Baseline::Kriging(fit_kriging_pca(&x, &y, &KrigingOptions::default())?),
        })
    }

    pub fn method(&self) -> Method {
        match self {
            Baseline::Naive(_) => Method::Naive,
            Baseline::Linear(_) => Method::Linear,
            Baseline::Lasso(_) => Method::Lasso,
            Baseline::Svr(_) => Method::Svr,
            Baseline::Kriging(_) => Method::Kriging,
        }
    }

    /// Raw prediction, negative values included.
    pub fn predict_raw(&self, scenario: &ProtectionScenario) -> Result<DepthVector> {
        let x = bits(scenario);
        let v = match self {
            Baseline::Naive(m) => return m.predict(scenario),
            Baseline::Linear(m) => m.predict(&x)?,
            Baseline::Lasso(m) => m.predict(&x)?,
            Baseline::Svr(m) => m.predict(&x)?,
            Baseline::Kriging(m) => m.predict(&x)?,
        };
        Ok(DepthVector::new(v.into_iter().map(|v| v as f32).collect()))
    }

    /// Prediction after negative clipping.
    pub fn predict(&self, scenario: &ProtectionScenario) -> Result<DepthVector> {
        Ok(clip_negative(&self.predict_raw(scenario)?))
    }

    pub fn to_artifact(&self) -> Artifact {
        match self {
            Baseline::Naive(m) => m.to_artifact(),
            Baseline::Linear(m) => m.to_artifact("linear"),
            Baseline::Lasso(m) => m.to_artifact(),
            Baseline::Svr(m) => m.to_artifact(),
            Baseline::Kriging(m) => m.to_artifact(),
        }
    }

    pub fn from_artifact(a: &Artifact) -> Result<Self> {
        Ok(match a.method.parse::<Method>()? {
            Method::Naive => Baseline::Naive(NaivePredictor::from_artifact(a)?),
            Method::Linear => Baseline::Linear(LinearModel::from_artifact(a)?),
            Method::Lasso => Baseline::Lasso(LassoPolyModel::from_artifact(a)?),
            Method::Svr => Baseline::Svr(SvrEnsemble::from_artifact(a)?),
            Method::Kriging => Baseline::Kriging(KrigingPcaModel::from_artifact(a)?),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.to_artifact().save(dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::from_artifact(&Artifact::load(dir)?)
    }
}
