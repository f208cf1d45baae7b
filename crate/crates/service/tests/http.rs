use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use base64::Engine;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use caspian::data::{synthetic_dataset, SynthOracleParams};
use caspian::grid::decode_inundation;
use caspian::model::{build_caspian, count_params, ModelConfig};
use caspian::run::{Geometry, Predictor};
use caspian_service::api::{router, AppState};

const D_X: usize = 5;
const D_Y: usize = 40;

fn state() -> Arc<AppState> {
    let ds = synthetic_dataset(D_X, D_Y, 32, 32, 8, &SynthOracleParams::default()).unwrap();
    let cfg = ModelConfig {
        height: 32,
        width: 32,
        filters: 4,
        depth: 2,
        cardinality: 2,
        blocks: 1,
        group_width: 1,
        ..ModelConfig::desk()
    };
    let model = build_caspian(&cfg, 3).unwrap();
    let predictor = Predictor::new(model, Geometry::of(&ds), "test-fingerprint".into()).unwrap();
    Arc::new(AppState::new(predictor))
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Value, String) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let ctype = res
        .headers()
        .get("content-type")
        .map(|v| v.to_str().unwrap().to_string())
        .unwrap_or_default();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap(), ctype)
}

fn floats(v: &Value) -> Vec<f32> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap() as f32).collect()
}

#[tokio::test]
async fn health_is_ok() {
    let app = router(state());
    let (s, body, ctype) = call(&app, "GET", "/health", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body, json!({ "status": "ok" }));
    assert_eq!(ctype, "application/json");
}

#[tokio::test]
async fn meta_and_locations() {
    let st = state();
    let app = router(st.clone());
    let (s, meta, _) = call(&app, "GET", "/meta", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(meta["d_x"], D_X);
    assert_eq!(meta["d_y"], D_Y);
    assert_eq!(meta["height"], 32);
    assert_eq!(meta["fingerprint"], "test-fingerprint");
    assert_eq!(meta["param_count"], st.meta().param_count);
    let (s, locs, _) = call(&app, "GET", "/locations", None).await;
    assert_eq!(s, StatusCode::OK);
    let locs = locs.as_array().unwrap();
    assert_eq!(locs.len(), D_Y);
    assert!(locs.iter().all(|l| l["segment_id"].as_u64().unwrap() < D_X as u64));
}

#[tokio::test]
async fn predict_all_ones() {
    let app = router(state());
    let (s, body, ctype) = call(&app, "POST", "/predict", Some(r#"{"scenario": "11111"}"#)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ctype, "application/json");
    let d = floats(&body["depths"]);
    assert_eq!(d.len(), D_Y);
    assert!(d.iter().all(|&v| v >= 0.0));
    assert!(body["latency_ms"].as_f64().unwrap() > 0.0);
    assert_eq!(body["fingerprint"], "test-fingerprint");
    assert!(body.get("grid").is_none());
    assert!(body.get("diff").is_none());
}

#[tokio::test]
async fn predict_grid_and_reference() {
    let app = router(state());
    let req = r#"{"scenario": "10100", "include_grid": true, "reference": "00000"}"#;
    let (s, body, _) = call(&app, "POST", "/predict", Some(req)).await;
    assert_eq!(s, StatusCode::OK);
    let depths = floats(&body["depths"]);
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(body["grid"].as_str().unwrap())
        .unwrap();
    let map = decode_inundation(&bytes).unwrap();
    assert_eq!((map.h(), map.w()), (32, 32));
    assert_eq!(map.valid_count(), D_Y);
    let (_, reference, _) = call(&app, "POST", "/predict", Some(r#"{"scenario": "00000"}"#)).await;
    let expect: Vec<f32> = depths.iter().zip(floats(&reference["depths"])).map(|(a, b)| a - b).collect();
    assert_eq!(floats(&body["diff"]), expect);
}

#[tokio::test]
async fn predict_is_referentially_transparent() {
    let app = router(state());
    let req = r#"{"scenario": "01101"}"#;
    let (_, a, _) = call(&app, "POST", "/predict", Some(req)).await;
    let (_, b, _) = call(&app, "POST", "/predict", Some(req)).await;
    assert_eq!(a["depths"], b["depths"]);
}

#[tokio::test]
async fn concurrent_matches_serial() {
    let app = router(state());
    let scenarios: Vec<String> = (0..8).map(|i| format!("{:05b}", i * 3 % 32)).collect();
    let mut serial = Vec::new();
    for s in &scenarios {
        let (_, b, _) = call(&app, "POST", "/predict", Some(&json!({ "scenario": s }).to_string())).await;
        serial.push(b["depths"].clone());
    }
    let handles: Vec<_> = scenarios
        .iter()
        .map(|s| {
            let app = app.clone();
            let body = json!({ "scenario": s }).to_string();
            tokio::spawn(async move { call(&app, "POST", "/predict", Some(&body)).await.1["depths"].clone() })
        })
        .collect();
    for (h, expect) in handles.into_iter().zip(serial) {
        assert_eq!(h.await.unwrap(), expect);
    }
}

#[tokio::test]
async fn compare_identity_and_sign() {
    let app = router(state());
    let (s, body, _) = call(&app, "POST", "/compare", Some(r#"{"a": "10101", "b": "10101"}"#)).await;
    assert_eq!(s, StatusCode::OK);
    let diff = floats(&body["diff"]);
    assert_eq!(diff.len(), D_Y);
    assert!(diff.iter().all(|&v| v == 0.0));
    let (_, body, _) = call(&app, "POST", "/compare", Some(r#"{"a": "00000", "b": "11111"}"#)).await;
    let (a, b, d) = (floats(&body["a"]), floats(&body["b"]), floats(&body["diff"]));
    for i in 0..D_Y {
        assert_eq!(d[i], b[i] - a[i]);
    }
}

#[tokio::test]
async fn malformed_body_is_400() {
    let app = router(state());
    for body in ["not json", r#"{"scenaro": "11111"}"#, r#"{"scenario": 5}"#, r#"{"scenario": "11x11"}"#] {
        let (s, v, ctype) = call(&app, "POST", "/predict", Some(body)).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{body}");
        assert_eq!(ctype, "application/json");
        assert!(!v["message"].as_str().unwrap().is_empty());
    }
    let (s, v, _) = call(&app, "POST", "/predict", Some(r#"{"include_grid": true}"#)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["message"].as_str().unwrap().contains("scenario"));
    let (s, _, _) = call(&app, "POST", "/compare", Some(r#"{"a": "11111"}"#)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn wrong_length_is_422() {
    let app = router(state());
    let (s, v, _) = call(&app, "POST", "/predict", Some(r#"{"scenario": "1111"}"#)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(v["message"].as_str().unwrap().contains("4 bits"));
    let (s, _, _) = call(&app, "POST", "/predict", Some(r#"{"scenario": "11111", "reference": "111111"}"#)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _, _) = call(&app, "POST", "/compare", Some(r#"{"a": "11111", "b": "1"}"#)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn numeric_failure_is_500_with_incident() {
    let ds = synthetic_dataset(D_X, D_Y, 32, 32, 8, &SynthOracleParams::default()).unwrap();
    let cfg = ModelConfig {
        height: 32,
        width: 32,
        filters: 4,
        depth: 2,
        cardinality: 2,
        blocks: 1,
        group_width: 1,
        ..ModelConfig::desk()
    };
    let mut model = build_caspian(&cfg, 3).unwrap();
    let id = model.params().id("head/pointwise.bias").unwrap();
    model.params_mut().tensor_mut(id).data_mut()[0] = f32::INFINITY;
    assert!(count_params(&model) > 0);
    let predictor = Predictor::new(model, Geometry::of(&ds), "fp".into()).unwrap();
    let app = router(Arc::new(AppState::new(predictor)));
    let (s, v, _) = call(&app, "POST", "/predict", Some(r#"{"scenario": "11111"}"#)).await;
    assert_eq!(s, StatusCode::INTERNAL_SERVER_ERROR);
    assert!(!v["incident_id"].as_str().unwrap().is_empty());
}

#[tokio::test]
async fn unknown_route_is_json_404() {
    let app = router(state());
    let (s, v, _) = call(&app, "GET", "/nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["error"], "not_found");
}
