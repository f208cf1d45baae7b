//! JSON-over-HTTP inference endpoints.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;

use caspian::grid::{encode_inundation, encode_inundation_bytes, DepthVector};
use caspian::model::{count_params, ModelConfig};
use caspian::run::Predictor;
use caspian::scenario::{parse_scenario, ProtectionScenario};

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("internal failure (incident {incident})")]
    Internal { incident: String },
    #[error("no route for {0}")]
    NotFound(String),
}

impl ApiError {
    fn internal(err: impl std::fmt::Display) -> Self {
        let incident = uuid::Uuid::new_v4().to_string();
        log::error!("incident {incident}: {err}");
        ApiError::Internal { incident }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match &self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, json!({ "error": "bad_request", "message": m })),
            ApiError::Unprocessable(m) => (
                StatusCode::UNPROCESSABLE_ENTITY,
                json!({ "error": "unprocessable", "message": m }),
            ),
            ApiError::Internal { incident } => (
                StatusCode::INTERNAL_SERVER_ERROR,
                json!({ "error": "internal", "message": self.to_string(), "incident_id": incident }),
            ),
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, json!({ "error": "not_found", "message": m })),
        };
        (status, Json(body)).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    pub scenario: String,
    #[serde(default)]
    pub include_grid: bool,
    #[serde(default)]
    pub reference: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub depths: Vec<f32>,
    /// Base64 of the binary grid format, with validity mask.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<String>,
    /// `depths - depths(reference)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diff: Option<Vec<f32>>,
    pub latency_ms: f64,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareRequest {
    pub a: String,
    pub b: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareResponse {
    pub a: Vec<f32>,
    pub b: Vec<f32>,
    /// `b - a` per location.
    pub diff: Vec<f32>,
    pub latency_ms: f64,
    pub fingerprint: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Meta {
    pub d_x: usize,
    pub d_y: usize,
    pub height: usize,
    pub width: usize,
    pub fingerprint: String,
    pub param_count: usize,
    pub model: ModelConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocationRecord {
    pub id: u32,
    pub lon: f64,
    pub lat: f64,
    pub segment_id: usize,
}

pub struct AppState {
    predictor: Predictor,
    meta: Meta,
}

impl AppState {
    pub fn new(predictor: Predictor) -> Self {
        let cfg = predictor.model.config().clone();
        let meta = Meta {
            d_x: predictor.d_x,
            d_y: predictor.d_y(),
            height: cfg.height,
            width: cfg.width,
            fingerprint: predictor.fingerprint.clone(),
            param_count: count_params(&predictor.model),
            model: cfg,
        };
        Self { predictor, meta }
    }

    pub fn meta(&self) -> &Meta {
        &self.meta
    }

    fn scenario(&self, field: &str, text: &str) -> Result<ProtectionScenario, ApiError> {
        let s = parse_scenario(text).map_err(|e| ApiError::BadRequest(format!("field '{field}': {e}")))?;
        if s.d_x() != self.meta.d_x {
            return Err(ApiError::Unprocessable(format!(
                "field '{field}': scenario has {} bits, model expects {}",
                s.d_x(),
                self.meta.d_x
            )));
        }
        Ok(s)
    }

    fn depths(&self, scenarios: &[ProtectionScenario]) -> Result<Vec<DepthVector>, ApiError> {
        self.predictor.predict_batch(scenarios).map_err(ApiError::internal)
    }

    pub fn predict(&self, req: &PredictRequest) -> Result<PredictResponse, ApiError> {
        let start = Instant::now();
        let mut scenarios = vec![self.scenario("scenario", &req.scenario)?];
        if let Some(r) = &req.reference {
            scenarios.push(self.scenario("reference", r)?);
        }
        let mut out = self.depths(&scenarios)?;
        let reference = (out.len() > 1).then(|| out.pop().expect("two outputs"));
        let depths = out.pop().expect("one output");
        let grid = if req.include_grid {
            let map = encode_inundation(&depths, &self.predictor.index_map).map_err(ApiError::internal)?;
            Some(base64::engine::general_purpose::STANDARD.encode(encode_inundation_bytes(&map, true)))
        } else {
            None
        };
        let diff = reference.map(|r| difference(&r, &depths));
        Ok(PredictResponse {
            depths: depths.values,
            grid,
            diff,
            latency_ms: elapsed_ms(start),
            fingerprint: self.meta.fingerprint.clone(),
        })
    }

    pub fn compare(&self, req: &CompareRequest) -> Result<CompareResponse, ApiError> {
        let start = Instant::now();
        let scenarios = [self.scenario("a", &req.a)?, self.scenario("b", &req.b)?];
        let mut out = self.depths(&scenarios)?;
        let b = out.pop().expect("two outputs");
        let a = out.pop().expect("two outputs");
        Ok(CompareResponse {
            diff: difference(&a, &b),
            a: a.values,
            b: b.values,
            latency_ms: elapsed_ms(start),
            fingerprint: self.meta.fingerprint.clone(),
        })
    }
}

fn difference(from: &DepthVector, to: &DepthVector) -> Vec<f32> {
    to.values.iter().zip(&from.values).map(|(t, f)| t - f).collect()
}

fn elapsed_ms(start: Instant) -> f64 {
    (start.elapsed().as_secs_f64() * 1e3).max(1e-6)
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("malformed request body: {e}")))
}

type Shared = Arc<AppState>;

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn meta(State(state): State<Shared>) -> Json<Meta> {
    Json(state.meta.clone())
}

async fn locations(State(state): State<Shared>) -> Json<Vec<LocationRecord>> {
    Json(
        state
            .predictor
            .locations
            .iter()
            .map(|l| LocationRecord {
                id: l.id,
                lon: l.lon,
                lat: l.lat,
                segment_id: l.segment_id,
            })
            .collect(),
    )
}

async fn predict(State(state): State<Shared>, body: Bytes) -> Result<Json<PredictResponse>, ApiError> {
    let req: PredictRequest = parse_body(&body)?;
    let res = tokio::task::spawn_blocking(move || state.predict(&req))
        .await
        .map_err(ApiError::internal)??;
    Ok(Json(res))
}

async fn compare(State(state): State<Shared>, body: Bytes) -> Result<Json<CompareResponse>, ApiError> {
    let req: CompareRequest = parse_body(&body)?;
    let res = tokio::task::spawn_blocking(move || state.compare(&req))
        .await
        .map_err(ApiError::internal)??;
    Ok(Json(res))
}

async fn fallback(uri: axum::http::Uri) -> ApiError {
    ApiError::NotFound(uri.path().to_string())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/meta", get(meta))
        .route("/locations", get(locations))
        .route("/predict", post(predict))
        .route("/compare", post(compare))
        .fallback(fallback)
        .with_state(state)
}

/// Serves until interrupted.
pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
