//! Trains on the synthetic desk fixture and reports material recovery.
//!
//! `cargo run --release -p relight-core --example desk_fixture -- [stage1] [stage2]`

use std::time::Instant;

use relight_core::fixtures::{base_color_mae, desk_fixture};
use relight_core::optim::{initialize_scene, train_from, TrainConfig};

fn main() -> relight_core::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("iteration count")).collect();
    let fixture = desk_fixture(7, 400, 16, 4, 128)?;
    let config = TrainConfig {
        stage1_iters: args.first().copied().unwrap_or(2000),
        stage2_iters: args.get(1).copied().unwrap_or(1000),
        learn_env_light: false,
        enable_local_light: false,
        initial_env: Some(fixture.scene.env_light.coeffs.clone()),
        eval_interval: 250,
        init_points: 3000,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let init = initialize_scene(&fixture.data, &config)?;
    println!("initial points: {}", init.len());
    let outcome = train_from(&fixture.data, init, &config, &mut |r| {
        if r.iter % 50 == 0 || r.psnr_holdout.is_some() {
            println!("{} {:.1}s", serde_json::to_string(r).unwrap(), start.elapsed().as_secs_f64());
        }
    })?;
    let cams: Vec<_> = fixture.data.holdout.iter().map(|v| v.camera.clone()).collect();
    let mae = base_color_mae(&fixture.scene, &outcome.scene, &cams)?;
    println!("base-color MAE {mae:.4}, points {}, {:.1}s", outcome.scene.len(), start.elapsed().as_secs_f64());
    Ok(())
}
