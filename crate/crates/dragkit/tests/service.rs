use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use dragkit::cli::benchmark_scene;
use dragkit::formats;
use dragkit::service::{router, AppState};
use dragkit::{Engine, EngineConfig};
use dragkit_core::diffusion::run_ddim;
use dragkit_core::engine::{decode_latent, encode_image, RgbImage};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const BOUNDARY: &str = "dragkit-test-boundary";

fn quick_config() -> EngineConfig {
    let mut config = EngineConfig::default();
    config.readout.training.steps = 20;
    config.readout.training.triplets = 8;
    config.drag.max_drag_iterations = 8;
    config
}

fn app() -> Router {
    router(AppState::new(Engine::new(quick_config()).unwrap()))
}

fn multipart(name: &str, bytes: &[u8]) -> Vec<u8> {
    let mut body = format!(
        "--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{name}\"; filename=\"in.png\"\r\n\
         Content-Type: image/png\r\n\r\n"
    )
    .into_bytes();
    body.extend_from_slice(bytes);
    body.extend_from_slice(format!("\r\n--{BOUNDARY}--\r\n").as_bytes());
    body
}

async fn send(
    app: &Router,
    method: Method,
    uri: &str,
    body: Body,
    content_type: Option<String>,
) -> (StatusCode, Vec<u8>) {
    let mut request = Request::builder().method(method).uri(uri);
    if let Some(ct) = content_type {
        request = request.header(header::CONTENT_TYPE, ct);
    }
    let response = app
        .clone()
        .oneshot(request.body(body).unwrap())
        .await
        .unwrap();
    let status = response.status();
    let bytes = response
        .into_body()
        .collect()
        .await
        .unwrap()
        .to_bytes()
        .to_vec();
    (status, bytes)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    send(app, Method::GET, uri, Body::empty(), None).await
}

async fn post_json(app: &Router, uri: &str, value: Value) -> (StatusCode, Value) {
    let (status, bytes) = send(
        app,
        Method::POST,
        uri,
        Body::from(value.to_string()),
        Some("application/json".into()),
    )
    .await;
    (
        status,
        serde_json::from_slice(&bytes).unwrap_or(Value::Null),
    )
}

async fn create(app: &Router, png: &[u8]) -> (StatusCode, Value) {
    let (status, bytes) = send(
        app,
        Method::POST,
        "/sessions",
        Body::from(multipart("image", png)),
        Some(format!("multipart/form-data; boundary={BOUNDARY}")),
    )
    .await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

async fn wait_done(app: &Router, id: &str) -> Value {
    for _ in 0..2400 {
        let (status, bytes) = get(app, &format!("/sessions/{id}/status")).await;
        assert_eq!(status, StatusCode::OK);
        let body: Value = serde_json::from_slice(&bytes).unwrap();
        match body["status"].as_str().unwrap() {
            "running" => tokio::time::sleep(Duration::from_millis(50)).await,
            _ => return body,
        }
    }
    panic!("session {id} did not finish");
}

fn blob_png() -> Vec<u8> {
    formats::encode_png(&benchmark_scene().0)
}

#[tokio::test(flavor = "multi_thread")]
async fn mask_preview_is_stable_and_peaks_at_255() {
    let app = app();
    let (status, session) = create(&app, &blob_png()).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(session["version"], 1);
    assert_eq!(session["status"], "idle");
    assert_eq!(
        (session["width"].clone(), session["height"].clone()),
        (json!(64), json!(64))
    );
    let id = session["id"].as_str().unwrap();

    let (status, _) = get(&app, &format!("/sessions/{id}/mask")).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let pairs = json!([{"handle": [24, 32], "target": [40, 32]}]);
    let (status, body) = post_json(&app, &format!("/sessions/{id}/pairs"), pairs.clone()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["pairs"], pairs);

    let (status, first) = get(&app, &format!("/sessions/{id}/mask")).await;
    assert_eq!(status, StatusCode::OK);
    let (_, second) = get(&app, &format!("/sessions/{id}/mask")).await;
    assert_eq!(first, second);
    let mask = image::load_from_memory(&first).unwrap().to_luma8();
    assert_eq!(mask.dimensions(), (64, 64));
    assert_eq!(mask.pixels().map(|p| p.0[0]).max(), Some(255));
}

fn round_trip(image: &RgbImage, engine: &Engine, t: usize) -> RgbImage {
    let b = engine.backend();
    let z0 = encode_image(image, b.latent_factor).unwrap();
    let zt = run_ddim(&z0, t, &b.denoiser, &b.schedule).unwrap();
    let z = run_ddim(&zt, 0, &b.denoiser, &b.schedule).unwrap();
    decode_latent(&z, b.latent_factor).unwrap()
}

#[tokio::test(flavor = "multi_thread")]
async fn null_edit_runs_to_a_round_trip() {
    let app = app();
    let png = blob_png();
    let (_, session) = create(&app, &png).await;
    let id = session["id"].as_str().unwrap();
    let pairs = json!([{"handle": [24, 32], "target": [24, 32]}]);
    assert_eq!(
        post_json(&app, &format!("/sessions/{id}/pairs"), pairs)
            .await
            .0,
        StatusCode::OK
    );

    let (status, _) = get(&app, &format!("/sessions/{id}/result")).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, body) = post_json(&app, &format!("/sessions/{id}/run"), json!({"seed": 3})).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!(body["status"], "running");

    let done = wait_done(&app, id).await;
    assert_eq!(done["status"], "done", "{done}");
    assert_eq!(done["seed"], 3);
    assert_eq!(done["mean_distance"], 0.0);
    assert_eq!(done["converged"], true);

    let (status, report) = get(&app, &format!("/sessions/{id}/result/report")).await;
    assert_eq!(status, StatusCode::OK);
    let report = formats::ReportDocument::from_json(std::str::from_utf8(&report).unwrap()).unwrap();
    assert_eq!(report.seed, 3);
    assert_eq!(report.report.mean_distance, 0.0);

    let (status, edited) = get(&app, &format!("/sessions/{id}/result")).await;
    assert_eq!(status, StatusCode::OK);
    let edited = formats::decode_png(&edited).unwrap();
    let engine = Engine::new(quick_config()).unwrap();
    let input = formats::decode_png(&png).unwrap();
    let expected = round_trip(&input, &engine, report.report.drag_timestep);
    let expected = formats::decode_png(&formats::encode_png(&expected)).unwrap();
    assert!(edited.mean_abs_diff(&expected).unwrap() <= 1e-4);
    for tail in ["mask", "displacement"] {
        let (status, bytes) = get(&app, &format!("/sessions/{id}/result/{tail}")).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(image::load_from_memory(&bytes).unwrap().width(), 64);
    }

    let (status, _) = post_json(&app, &format!("/sessions/{id}/run"), json!({})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, body) = post_json(
        &app,
        &format!("/sessions/{id}/pairs"),
        json!([{"handle": [1, 1], "target": [2, 2]}]),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["code"], "conflict");
}

#[tokio::test(flavor = "multi_thread")]
async fn concurrent_sessions_finish_independently() {
    let app = app();
    let png = blob_png();
    let mut ids = Vec::new();
    for (target, seed) in [([40, 32], 1), ([24, 44], 2)] {
        let (_, session) = create(&app, &png).await;
        let id = session["id"].as_str().unwrap().to_string();
        let pairs = json!([{"handle": [24, 32], "target": target}]);
        assert_eq!(
            post_json(&app, &format!("/sessions/{id}/pairs"), pairs)
                .await
                .0,
            StatusCode::OK
        );
        let (status, _) =
            post_json(&app, &format!("/sessions/{id}/run"), json!({"seed": seed})).await;
        assert_eq!(status, StatusCode::ACCEPTED);
        ids.push(id);
    }
    let mut results = Vec::new();
    for (id, seed) in ids.iter().zip([1, 2]) {
        let done = wait_done(&app, id).await;
        assert_eq!(done["status"], "done", "{done}");
        assert_eq!(done["seed"], seed);
        assert!(done["iterations"].as_u64().unwrap() > 0);
        assert!(!done["loss_tail"].as_array().unwrap().is_empty());
        results.push(get(&app, &format!("/sessions/{id}/result")).await.1);
    }
    assert_ne!(results[0], results[1]);

    let (status, _) = send(
        &app,
        Method::DELETE,
        &format!("/sessions/{}", ids[0]),
        Body::empty(),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    assert_eq!(
        get(&app, &format!("/sessions/{}/status", ids[0])).await.0,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        get(&app, &format!("/sessions/{}/status", ids[1])).await.0,
        StatusCode::OK
    );
}

#[tokio::test(flavor = "multi_thread")]
async fn errors_use_the_documented_shape() {
    let app = app();
    let (status, bytes) = get(&app, "/sessions/nope/status").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let body: Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(body["version"], 1);
    assert_eq!(body["error"]["code"], "not_found");

    let (status, body) = create(&app, b"not a png").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["code"], "invalid");

    let odd = formats::encode_png(&RgbImage::from_fn(60, 64, |_, _| [0.5; 3]));
    let (status, body) = create(&app, &odd).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["error"]["message"].as_str().unwrap().contains("60x64"));

    let (_, session) = create(&app, &blob_png()).await;
    let id = session["id"].as_str().unwrap();
    let (status, _) = post_json(&app, &format!("/sessions/{id}/run"), json!({})).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let bad = json!([
        {"handle": [1, 1], "target": [2, 2]},
        {"handle": [70, 1], "target": [2, 2]},
        {"handle": [1, 1]}
    ]);
    let (status, body) = post_json(&app, &format!("/sessions/{id}/pairs"), bad).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let details = body["error"]["details"].as_array().unwrap();
    assert!(!details.is_empty());
    assert!(details.iter().all(|d| d["index"].is_u64()));

    let bounds = json!([{"handle": [1, 1], "target": [64, 2]}]);
    let (status, body) = post_json(&app, &format!("/sessions/{id}/pairs"), bounds).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["details"][0]["index"], 0);

    let (status, session) = get(&app, &format!("/sessions/{id}/status")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(
        serde_json::from_slice::<Value>(&session).unwrap()["status"],
        "idle"
    );
}
