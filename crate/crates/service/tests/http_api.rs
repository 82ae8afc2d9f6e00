use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use http_body_util::BodyExt;
use nalgebra::Vector3;
use relight_core::fixtures;
use relight_core::io::{decode_fmap, encode_hdr, latlong_direction};
use relight_core::render::FloatImage;
use relight_core::{CameraSpec, Scene};
use relight_service::api::{router, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

fn one_point_scene() -> Scene {
    let mut r = fixtures::rng(11);
    let mut p = fixtures::random_point(&mut r, Vector3::zeros(), 0.1, (0.3, 0.4));
    p.mean = Vector3::zeros();
    p.normal = Vector3::new(0.0, -1.0, 0.2).normalize();
    let mut scene = Scene::new(vec![p]);
    scene.env_light = fixtures::random_env(&mut r, 3, 1.0, 0.1);
    scene
}

fn cluster_scene(n: usize) -> Scene {
    let mut r = fixtures::rng(5);
    let points = (0..n).map(|_| fixtures::random_point(&mut r, Vector3::zeros(), 1.0, (0.05, 0.1))).collect();
    Scene::new(points)
}

fn camera(size: u32) -> CameraSpec {
    fixtures::orbit_camera(Vector3::zeros(), 3.0, -1.2, 0.3, 0.6, size, size).to_spec("view")
}

fn state(scenes: Vec<(&str, Scene)>) -> Arc<AppState> {
    AppState::new(scenes.into_iter().map(|(n, s)| (n.to_string(), s)).collect(), 64).unwrap()
}

async fn call(app: &axum::Router, method: &str, uri: &str, content_type: &str, body: Vec<u8>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header(header::CONTENT_TYPE, content_type)
        .body(Body::from(body))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn call_json(app: &axum::Router, method: &str, uri: &str, body: Value) -> (StatusCode, Vec<u8>) {
    call(app, method, uri, "application/json", serde_json::to_vec(&body).unwrap()).await
}

async fn get_json(app: &axum::Router, uri: &str) -> (StatusCode, Value) {
    let (s, b) = call(app, "GET", uri, "application/json", Vec::new()).await;
    (s, serde_json::from_slice(&b).unwrap())
}

fn render_body(channel: &str, extra: Value) -> Value {
    let mut body = json!({"camera": camera(24), "channels": [channel]});
    if let (Value::Object(b), Value::Object(e)) = (&mut body, extra) {
        b.extend(e);
    }
    body
}

async fn wait_for_job(app: &axum::Router, id: u64) -> Value {
    for _ in 0..6000 {
        let (s, v) = get_json(app, &format!("/v1/jobs/{id}")).await;
        assert_eq!(s, StatusCode::OK);
        if v["state"] != "running" {
            return v;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    panic!("job {id} did not finish");
}

#[tokio::test]
async fn scene_endpoint_describes_the_fixture() {
    let app = router(state(vec![("fixture", one_point_scene())]));
    let (s, v) = get_json(&app, "/v1/scene").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["n_points"], 1);
    assert_eq!(v["env_sh"].as_array().unwrap().len(), 48);
    assert_eq!(v["sh_degrees"]["env"], 3);
    assert_eq!(v["scene_ids"], json!(["fixture"]));
    assert!(v["bounds"]["min"].is_array());
}

#[tokio::test]
async fn identical_renders_are_byte_identical() {
    let app = router(state(vec![("fixture", one_point_scene())]));
    let body = render_body("pbr", json!({}));
    let (s1, a) = call_json(&app, "POST", "/v1/render", body.clone()).await;
    let (s2, b) = call_json(&app, "POST", "/v1/render", body).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(&a[..8], b"\x89PNG\r\n\x1a\n");
    assert_eq!(a, b);
}

#[tokio::test]
async fn data_channels_come_back_as_float_maps() {
    let app = router(state(vec![("fixture", one_point_scene())]));
    let (s, bytes) = call_json(&app, "POST", "/v1/render", render_body("normal", json!({}))).await;
    assert_eq!(s, StatusCode::OK);
    let img = decode_fmap(&bytes).unwrap();
    assert_eq!((img.width, img.height, img.channels), (24, 24, 3));
    assert!(img.data.iter().any(|v| *v != 0.0));
}

#[tokio::test]
async fn malformed_requests_are_rejected() {
    let app = router(state(vec![("fixture", one_point_scene())]));
    let cases = [
        json!({"channels": ["pbr"]}),
        render_body("pbr", json!({"shading": {"n_samples": 0}})),
        render_body("pbr", json!({"shading": {"n_samples": 4097}})),
        render_body("depth", json!({"encoding": "png"})),
        render_body("sparkle", json!({})),
        render_body("pbr", json!({"unexpected": 1})),
        json!({"camera": camera(8), "channels": ["pbr", "depth"]}),
        json!({"camera": camera(8), "channels": []}),
    ];
    for body in cases {
        let (s, b) = call_json(&app, "POST", "/v1/render", body.clone()).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{body}");
        let err: Value = serde_json::from_slice(&b).unwrap();
        assert!(err["error"].is_string());
    }
    let (s, _) = call(&app, "POST", "/v1/render", "application/json", b"{not json".to_vec()).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call_json(&app, "POST", "/v1/render", render_body("pbr", json!({"shading": {"n_samples": 4096}}))).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn doubling_the_environment_doubles_radiance() {
    let app = router(state(vec![("fixture", one_point_scene())]));
    let body = render_body("pbr", json!({"encoding": "fmap", "shading": {"enable_local_light": false}}));
    let (_, before) = call_json(&app, "POST", "/v1/render", body.clone()).await;
    let before = decode_fmap(&before).unwrap();
    let (_, info) = get_json(&app, "/v1/scene").await;
    let doubled: Vec<f64> = info["env_sh"].as_array().unwrap().iter().map(|v| 2.0 * v.as_f64().unwrap()).collect();
    let (s, resp) = call_json(&app, "POST", "/v1/env", json!({"sh": doubled})).await;
    assert_eq!(s, StatusCode::OK);
    let resp: Value = serde_json::from_slice(&resp).unwrap();
    assert_eq!(resp["env_sh"].as_array().unwrap().len(), 48);
    let (_, after) = call_json(&app, "POST", "/v1/render", body).await;
    let after = decode_fmap(&after).unwrap();
    let peak = before.data.iter().copied().fold(0.0, f64::max);
    assert!(peak > 0.05, "fixture must be lit");
    for (a, b) in before.data.iter().zip(&after.data) {
        assert!((b - 2.0 * a).abs() <= 1e-3 * (2.0 * a).max(peak), "{a} -> {b}");
    }
}

#[tokio::test]
async fn environment_updates_validate_and_accept_hdr() {
    let app = router(state(vec![("fixture", one_point_scene())]));
    let (s, _) = call_json(&app, "POST", "/v1/env", json!({"sh": [1.0, 2.0]})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "POST", "/v1/env", "application/octet-stream", b"garbage".to_vec()).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (w, h) = (64, 32);
    let mut img = FloatImage::new(w, h, 3);
    for j in 0..h {
        for i in 0..w {
            let d = latlong_direction(i, j, w, h);
            img.pixel_mut(i, j).copy_from_slice(&[0.5, 0.5 + 0.25 * d.z, 0.5]);
        }
    }
    let (s, b) = call(&app, "POST", "/v1/env", "image/vnd.radiance", encode_hdr(&img).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    let resp: Value = serde_json::from_slice(&b).unwrap();
    let (_, info) = get_json(&app, "/v1/scene").await;
    assert_eq!(info["env_sh"], resp["env_sh"]);
    assert_eq!(info["version"], 1);
    let dc = info["env_sh"][0].as_f64().unwrap();
    assert!((dc - 0.5 * (4.0 * std::f64::consts::PI).sqrt()).abs() < 0.02, "{dc}");

    let sh: Vec<f64> = (0..48).map(|i| if i < 3 { 1.0 } else { 0.0 }).collect();
    let (s, b) = call_json(&app, "POST", "/v1/env", json!({"sh": sh, "rotation": [0.7, 0.1, 0.7, 0.1]})).await;
    assert_eq!(s, StatusCode::OK);
    let resp: Value = serde_json::from_slice(&b).unwrap();
    let rotated: Vec<f64> = resp["env_sh"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    for (a, b) in rotated.iter().zip(&sh) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[tokio::test]
async fn compose_runs_as_a_job_and_commits_a_new_snapshot() {
    let app = router(state(vec![("a", one_point_scene()), ("b", cluster_scene(5))]));
    let (s, _) = call_json(&app, "POST", "/v1/compose", json!({"parts": [{"scene_id": "missing"}]})).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call_json(&app, "POST", "/v1/compose", json!({"parts": []})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call_json(
        &app,
        "POST",
        "/v1/compose",
        json!({"parts": [{"scene_id": "a", "transform": {"matrix": [2,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,0,1]}}]}),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let body = json!({"parts": [
        {"scene_id": "a"},
        {"scene_id": "b", "transform": {"translation": [2.0, 0.0, 0.0]}}
    ]});
    let (s, b) = call_json(&app, "POST", "/v1/compose", body).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let id = serde_json::from_slice::<Value>(&b).unwrap()["job_id"].as_u64().unwrap();
    let job = wait_for_job(&app, id).await;
    assert_eq!(job["state"], "done", "{job}");
    assert_eq!(job["n_points"], 6);
    let (_, info) = get_json(&app, "/v1/scene").await;
    assert_eq!(info["n_points"], 6);
    assert_eq!(info["version"], 1);

    let (s, _) = get_json(&app, "/v1/jobs/999").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "GET", "/v1/jobs/abc", "application/json", Vec::new()).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn mutations_conflict_while_renders_see_the_old_snapshot() {
    let app = router(state(vec![("big", cluster_scene(1000))]));
    let render = render_body("opacity", json!({}));
    let (_, before) = call_json(&app, "POST", "/v1/render", render.clone()).await;

    let (s, b) = call_json(&app, "POST", "/v1/compose", json!({"parts": [{"scene_id": "current"}], "rays": 2048})).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let id = serde_json::from_slice::<Value>(&b).unwrap()["job_id"].as_u64().unwrap();

    let (s, _) = call_json(&app, "POST", "/v1/env", json!({"sh": vec![0.5; 48]})).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = call_json(&app, "POST", "/v1/compose", json!({"parts": [{"scene_id": "big"}]})).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, during) = call_json(&app, "POST", "/v1/render", render.clone()).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(during, before);
    let (_, info) = get_json(&app, "/v1/scene").await;
    assert_eq!(info["version"], 0, "the job must still be running for this test to mean anything");

    assert_eq!(wait_for_job(&app, id).await["state"], "done");
    let (s, _) = call_json(&app, "POST", "/v1/env", json!({"sh": vec![0.5; 48]})).await;
    assert_eq!(s, StatusCode::OK);
}
