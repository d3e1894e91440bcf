#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use colorize_core::colorspace::RgbImage;
use colorize_core::denoiser::{Denoiser, DenoiserConfig};
use colorize_core::embed::{ColorStatsFeaturizer, ImageEmbedder};
use colorize_core::latent_codec::CodecBackend;
use colorize_core::ranker::{train_ranker, RankerModel, RankerTrainConfig};
use colorize_core::toy::toy_preference_pairs;
use colorize_service::config::SamplerDefaults;
use colorize_service::http::{router, AppState};
use colorize_service::jobs::JobStore;
use colorize_service::models::Models;
use colorize_service::ops::encode_base64;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub fn test_image(w: usize, h: usize, seed: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        let v = ((x as u32 * 7 + y as u32 * 13 + seed * 29) % 17) as f32 / 16.0;
        [v, 1.0 - v, (x as f32) / (w as f32)]
    })
    .unwrap()
}

pub fn png_b64(img: &RgbImage) -> String {
    encode_base64(&img.to_png_bytes().unwrap())
}

pub fn trained_ranker() -> RankerModel {
    let pairs = toy_preference_pairs(60, 16, 40.0, 3).unwrap();
    train_ranker(&pairs, &ColorStatsFeaturizer, &RankerTrainConfig::default()).unwrap()
}

/// Identity codec, a seeded tiny denoiser and a small trained ranker.
pub fn tiny_models(with_denoiser: bool, with_ranker: bool) -> Models {
    let restorer = with_denoiser
        .then(|| Box::new(Denoiser::new(DenoiserConfig::tiny(3), 5).unwrap()) as Box<dyn colorize_core::ColorRestorer>);
    let embedder: Box<dyn ImageEmbedder> = Box::new(ColorStatsFeaturizer);
    Models {
        codec: CodecBackend::Identity,
        restorer,
        ranker: with_ranker.then(trained_ranker),
        embedder,
        defaults: SamplerDefaults {
            steps: 3,
            ..SamplerDefaults::default()
        },
        config_hash: "test-config".into(),
    }
}

pub fn app(models: Models, dir: &std::path::Path) -> (Router, AppState) {
    let store = Arc::new(JobStore::open(dir).unwrap());
    let state = AppState::new(Arc::new(models), store, 2);
    (router(state.clone()), state)
}

pub async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

pub async fn post_json(app: &Router, uri: &str, body: &Value) -> (StatusCode, Value) {
    post_raw(app, uri, serde_json::to_vec(body).unwrap()).await
}

pub async fn post_raw(app: &Router, uri: &str, body: Vec<u8>) -> (StatusCode, Value) {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body))
        .unwrap();
    let (status, bytes) = call(app, req).await;
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

pub async fn rescale(app: &Router, id: &str, s: f64) -> (StatusCode, Vec<u8>) {
    let body = serde_json::to_vec(&serde_json::json!({"color_scale": s})).unwrap();
    call(
        app,
        Request::post(format!("/jobs/{id}/rescale"))
            .body(Body::from(body))
            .unwrap(),
    )
    .await
}

pub async fn get(app: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    call(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

/// Polls until the job finishes and returns its record.
pub async fn wait_finished(app: &Router, id: &str) -> Value {
    for _ in 0..6000 {
        let (status, body) = get(app, &format!("/jobs/{id}")).await;
        assert_eq!(status, StatusCode::OK);
        let job: Value = serde_json::from_slice(&body).unwrap();
        if job["status"] == "done" || job["status"] == "failed" {
            return job;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    panic!("job {id} did not finish");
}

/// Submits and waits; panics unless the job succeeds.
pub async fn run_ok(app: &Router, uri: &str, body: &Value) -> Value {
    let (status, resp) = post_json(app, uri, body).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{resp}");
    let job = wait_finished(app, resp["job_id"].as_str().unwrap()).await;
    assert_eq!(job["status"], "done", "{job}");
    job
}
