//! Serves a freshly initialized desk model over synthetic geometry, which is
//! enough to exercise the HTTP API without training first.
//!
//!   cargo run -p caspian-service --example serve_untrained
//!   curl -s localhost:8080/meta
//!   curl -s -XPOST localhost:8080/predict -d '{"scenario":"101010"}'
//!   curl -s -XPOST localhost:8080/compare -d '{"a":"000000","b":"111111"}'

use std::sync::Arc;

use caspian::data::{synthetic_dataset, SynthOracleParams};
use caspian::model::{build_caspian, ModelConfig};
use caspian::run::{Geometry, Predictor};
use caspian_service::api::{serve, AppState};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let ds = synthetic_dataset(6, 400, 128, 128, 8, &SynthOracleParams::default())?;
    let model = build_caspian(&ModelConfig::desk(), 0)?;
    let predictor = Predictor::new(model, Geometry::of(&ds), "untrained".into())?;
    serve(Arc::new(AppState::new(predictor)), ([127, 0, 0, 1], 8080).into()).await?;
    Ok(())
}
