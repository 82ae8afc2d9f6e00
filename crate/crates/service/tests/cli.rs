use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::Vector3;
use relight_core::bvh::{bake_visibility_into, build_lbvh, evaluate_visibility, BAKE_K_OFFSET};
use relight_core::fixtures;
use relight_core::io::{decode_png, encode_hdr, load_scene, save_scene, save_training_set};
use relight_core::optim::{Supervision, TrainingSet};
use relight_core::render::{rasterize, Channel, FloatImage, RenderRequest};
use relight_core::shading::ShadingConfig;
use relight_core::Scene;
use serde_json::Value;

fn relight(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relight")).args(args).output().unwrap()
}

fn ok_lines(out: &Output) -> Vec<Value> {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone())
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn error_line(out: &Output) -> Value {
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(stderr.trim_end().lines().count(), 1, "{stderr}");
    serde_json::from_str(stderr.trim()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn one_point(dir: &Path) -> PathBuf {
    let mut r = fixtures::rng(3);
    let mut p = fixtures::random_point(&mut r, Vector3::zeros(), 0.1, (0.3, 0.4));
    p.mean = Vector3::zeros();
    let path = dir.join("one.ply");
    save_scene(&Scene::new(vec![p]), &path).unwrap();
    path
}

fn write_camera(dir: &Path, size: u32) -> PathBuf {
    let cam = fixtures::orbit_camera(Vector3::zeros(), 3.0, 0.4, 0.2, 0.7, size, size);
    let path = dir.join("cam.json");
    std::fs::write(&path, serde_json::to_string(&cam.to_spec("cam")).unwrap()).unwrap();
    path
}

#[test]
fn render_is_deterministic_and_writes_each_channel() {
    let dir = tempfile::tempdir().unwrap();
    let scene = one_point(dir.path());
    let cam = write_camera(dir.path(), 20);
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let lines = ok_lines(&relight(&[
            "render", "--scene", s(&scene), "--camera", s(&cam), "--channels", "pbr,normal", "--out", s(&out_dir),
        ]));
        assert_eq!(lines.len(), 2);
        assert!(out_dir.join("normal.fmap").is_file());
        outputs.push(std::fs::read(out_dir.join("pbr.png")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let img = decode_png(&outputs[0]).unwrap();
    assert_eq!((img.width, img.height, img.channels), (20, 20, 3));
}

#[test]
fn bake_of_an_isolated_point_reports_a_tiny_residual() {
    let dir = tempfile::tempdir().unwrap();
    let scene = one_point(dir.path());
    let out = dir.path().join("baked.ply");
    let report = dir.path().join("residuals.bin");
    let lines = ok_lines(&relight(&[
        "bake", "--scene", s(&scene), "--rays", "256", "--out", s(&out), "--report", s(&report),
    ]));
    assert!(lines[0]["max_residual"].as_f64().unwrap() < 1e-3);
    assert_eq!(std::fs::read(&report).unwrap().len(), 4);
    let baked = load_scene(&out).unwrap();
    let v = evaluate_visibility(&baked.points[0].visibility_sh, 3, &Vector3::new(0.3, 0.4, 0.5).normalize());
    assert!((v - 1.0).abs() < 1e-2, "{v}");
}

#[test]
fn identity_compose_reproduces_the_input_within_the_bake_residual() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = fixtures::rng(9);
    let points = (0..40).map(|_| fixtures::random_point(&mut r, Vector3::zeros(), 0.6, (0.05, 0.15))).collect();
    let mut scene = Scene::new(points);
    let bvh = build_lbvh(&scene).unwrap();
    let bake = bake_visibility_into(&mut scene, &bvh, 128, BAKE_K_OFFSET).unwrap();
    let input = dir.path().join("in.ply");
    save_scene(&scene, &input).unwrap();
    let transform = dir.path().join("t.json");
    std::fs::write(&transform, r#"{"rotation": [1, 0, 0, 0], "translation": [0, 0, 0]}"#).unwrap();
    let out = dir.path().join("merged.ply");
    let part = format!("{}:{}", s(&input), s(&transform));
    let lines = ok_lines(&relight(&["compose", "--parts", &part, "--rays", "128", "--out", s(&out)]));
    assert_eq!(lines[0]["points"], 40);
    let merged = load_scene(&out).unwrap();
    let tol = 2.0 * bake.max_residual().max(1e-9);
    for (a, b) in scene.points.iter().zip(&merged.points) {
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.base_color, b.base_color);
        for (x, y) in a.visibility_sh.iter().zip(&b.visibility_sh) {
            assert!((x - y).abs() <= tol, "{x} vs {y}");
        }
    }
}

#[test]
fn relight_writes_a_png_under_the_new_light() {
    let dir = tempfile::tempdir().unwrap();
    let scene = one_point(dir.path());
    let cam = write_camera(dir.path(), 16);
    let env = dir.path().join("sky.hdr");
    std::fs::write(&env, encode_hdr(&FloatImage::filled(32, 16, 3, 0.8)).unwrap()).unwrap();
    for mode in ["online", "offline"] {
        let out = dir.path().join(format!("{mode}.png"));
        ok_lines(&relight(&[
            "relight", "--scene", s(&scene), "--env", s(&env), "--camera", s(&cam), "--mode", mode, "--out", s(&out),
        ]));
        let img = decode_png(&std::fs::read(&out).unwrap()).unwrap();
        assert!(img.data.iter().any(|v| *v > 0.0));
    }
}

#[test]
fn optimize_writes_a_scene_and_a_metrics_log() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = fixtures::rng(4);
    let points: Vec<_> = (0..30).map(|_| fixtures::random_point(&mut r, Vector3::zeros(), 0.4, (0.1, 0.2))).collect();
    let truth = Scene::new(points);
    let mut train = Vec::new();
    for i in 0..3 {
        let cam = fixtures::orbit_camera(Vector3::zeros(), 3.0, 2.0 * i as f64, 0.3, 0.8, 16, 16);
        let req = RenderRequest::new(cam.clone(), &[Channel::Color, Channel::Opacity]).with_shading(ShadingConfig::online());
        let buf = rasterize(&truth, &req).unwrap();
        let mask = buf.require(Channel::Opacity).unwrap().map(|o| if o > 0.5 { 1.0 } else { 0.0 });
        let image = buf.require(Channel::Color).unwrap().map(|v| v.clamp(0.0, 1.0));
        train.push(Supervision::new(cam, image, Some(mask), None).unwrap());
    }
    let data = dir.path().join("data");
    save_training_set(&data, &TrainingSet { train, holdout: Vec::new() }).unwrap();
    let config = dir.path().join("train.json");
    std::fs::write(
        &config,
        r#"{"stage1_iters": 6, "stage2_iters": 4, "init_points": 200, "eval_interval": 0, "bake_rays": 32, "visibility_batch": 16}"#,
    )
    .unwrap();
    let out = dir.path().join("trained.ply");
    let lines = ok_lines(&relight(&["optimize", "--data", s(&data), "--config", s(&config), "--out", s(&out)]));
    assert_eq!(lines[0]["iterations"], 10);
    let scene = load_scene(&out).unwrap();
    assert!(!scene.is_empty());
    let log = std::fs::read_to_string(dir.path().join("trained.metrics.jsonl")).unwrap();
    let records: Vec<Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 10);
    assert_eq!(records[9]["stage"], 2);
    assert!(records.iter().all(|r| r["total"].as_f64().unwrap().is_finite()));
}

#[test]
fn failures_print_one_machine_readable_line() {
    let dir = tempfile::tempdir().unwrap();
    let cam = write_camera(dir.path(), 8);
    let missing = dir.path().join("missing.ply");
    let err = error_line(&relight(&["render", "--scene", s(&missing), "--camera", s(&cam), "--out", s(dir.path())]));
    assert_eq!(err["error"], "load");
    assert!(err["message"].as_str().unwrap().contains("missing.ply"));

    let scene = one_point(dir.path());
    let err = error_line(&relight(&[
        "render", "--scene", s(&scene), "--camera", s(&cam), "--channels", "sparkle", "--out", s(dir.path()),
    ]));
    assert_eq!(err["error"], "invalid_input");

    let err = error_line(&relight(&["render", "--scene", s(&scene), "--samples", "0"]));
    assert_eq!(err["error"], "usage");

    let garbage = dir.path().join("garbage.ply");
    std::fs::write(&garbage, b"ply\nformat ascii 1.0\nend_header\n").unwrap();
    let err = error_line(&relight(&["bake", "--scene", s(&garbage), "--out", s(&dir.path().join("x.ply"))]));
    assert_eq!(err["error"], "parse");
}
