//! Flood-inundation surrogate modelling: protection scenarios, grid codecs,
//! a small CNN stack, classical baselines and the data pipeline around them.

pub mod augment;
pub mod baselines;
pub mod data;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod run;
pub mod scenario;
pub mod trainer;

pub use error::{Error, Result};
