//! `relight` subcommands.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use relight_core::bvh::{bake_visibility_into, build_lbvh, BAKE_K_OFFSET, DEFAULT_BAKE_RAYS};
use relight_core::io::{
    compose_scenes, load_camera, load_dataset, load_env_map, load_scene, save_scene, Similarity, TransformSpec,
};
use relight_core::optim::{train, TrainConfig};
use relight_core::render::{Channel, RenderRequest};
use relight_core::{Error, Scene};
use serde_json::json;

use crate::job::{encode_channel, render, Encoding, Mode, ShadingOptions};

#[derive(Debug, Parser)]
#[command(name = "relight", version, about = "Render, bake, optimize, compose and relight Gaussian scenes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render channels of a scene from one camera.
    Render {
        #[arg(long)]
        scene: PathBuf,
        /// Camera JSON file.
        #[arg(long)]
        camera: PathBuf,
        /// Comma-separated channel names.
        #[arg(long, default_value = "pbr")]
        channels: String,
        #[arg(long, value_enum, default_value_t = Mode::Online)]
        mode: Mode,
        /// Incident-light samples, overriding the mode preset.
        #[arg(long)]
        samples: Option<usize>,
        /// Output directory; one file per channel.
        #[arg(long)]
        out: PathBuf,
    },
    /// Bake per-point visibility by ray tracing.
    Bake {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BAKE_RAYS)]
        rays: usize,
        #[arg(long)]
        out: PathBuf,
        /// Optional per-point RMS residuals as little-endian 32-bit floats.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run two-stage training on a dataset directory.
    Optimize {
        #[arg(long)]
        data: PathBuf,
        /// Training configuration JSON; every field is optional.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Metrics log, one JSON object per line; defaults next to the output.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Place several scenes into one and re-bake visibility.
    Compose {
        /// `scene.ply` or `scene.ply:transform.json`.
        #[arg(long, num_args = 1.., required = true)]
        parts: Vec<String>,
        /// Environment map (.hdr or .fmap); defaults to the first part's light.
        #[arg(long)]
        env: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_BAKE_RAYS)]
        rays: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the shaded image under a new environment map.
    Relight {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Online)]
        mode: Mode,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the HTTP API.
    Serve {
        /// Scene files; ids are the file stems.
        #[arg(long, num_args = 1.., required = true)]
        scene: Vec<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Rays per point when a composition re-bakes visibility.
        #[arg(long, default_value_t = DEFAULT_BAKE_RAYS)]
        bake_rays: usize,
    },
}

/// Failure of a subcommand, reported as one JSON line on stderr.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn to_line(&self) -> String {
        json!({"error": self.kind, "message": self.message.replace('\n', " ")}).to_string()
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::InvalidInput(_) => "invalid_input",
            Error::Parse { .. } => "parse",
            Error::Load { .. } => "load",
            Error::Io(_) => "io",
        };
        Self::new(kind, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new("io", e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn io_at(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::new("io", format!("{}: {e}", path.display()))
}

/// Runs one subcommand, writing its report lines to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult {
    match cli.command {
        Command::Render {
            scene,
            camera,
            channels,
            mode,
            samples,
            out: dir,
        } => cmd_render(&scene, &camera, &channels, mode, samples, &dir, out),
        Command::Bake {
            scene,
            rays,
            out: path,
            report,
        } => cmd_bake(&scene, rays, &path, report.as_deref(), out),
        Command::Optimize {
            data,
            config,
            out: path,
            metrics,
        } => cmd_optimize(&data, config.as_deref(), &path, metrics.as_deref(), out),
        Command::Compose {
            parts,
            env,
            rays,
            out: path,
        } => cmd_compose(&parts, env.as_deref(), rays, &path, out),
        Command::Relight {
            scene,
            env,
            camera,
            mode,
            samples,
            out: path,
        } => cmd_relight(&scene, &env, &camera, mode, samples, &path, out),
        Command::Serve {
            scene,
            port,
            host,
            bake_rays,
        } => cmd_serve(&scene, &host, port, bake_rays, out),
    }
}

fn shading(mode: Mode, samples: Option<usize>) -> ShadingOptions {
    ShadingOptions {
        mode,
        n_samples: samples,
        ..Default::default()
    }
}

fn cmd_render(
    scene: &Path,
    camera: &Path,
    channels: &str,
    mode: Mode,
    samples: Option<usize>,
    dir: &Path,
    out: &mut dyn Write,
) -> CliResult {
    let channels = Channel::parse_list(channels)?;
    if channels.is_empty() {
        return Err(CliError::new("invalid_input", "no channels requested"));
    }
    let scene = load_scene(scene)?;
    let camera = load_camera(camera)?;
    let shading = shading(mode, samples).resolve()?;
    let gamma = shading.gamma;
    let req = RenderRequest::new(camera, &channels).with_shading(shading);
    let buffers = render(&scene, &req, None)?;
    std::fs::create_dir_all(dir).map_err(|e| io_at(dir, e))?;
    for ch in channels {
        let encoding = Encoding::default_for(ch);
        let bytes = encode_channel(buffers.require(ch)?, ch, gamma, encoding)?;
        let path = dir.join(format!("{}.{}", ch.name(), encoding.extension()));
        std::fs::write(&path, bytes).map_err(|e| io_at(&path, e))?;
        writeln!(out, "{}", json!({"channel": ch.name(), "path": path}))?;
    }
    Ok(())
}

fn cmd_bake(scene_path: &Path, rays: usize, path: &Path, report: Option<&Path>, out: &mut dyn Write) -> CliResult {
    let mut scene = load_scene(scene_path)?;
    if scene.is_empty() {
        return Err(CliError::new("invalid_input", "scene has no points"));
    }
    let bvh = build_lbvh(&scene)?;
    let bake = bake_visibility_into(&mut scene, &bvh, rays, BAKE_K_OFFSET)?;
    save_scene(&scene, path)?;
    if let Some(r) = report {
        std::fs::write(r, bake.residual_report_bytes()).map_err(|e| io_at(r, e))?;
    }
    writeln!(
        out,
        "{}",
        json!({
            "points": scene.len(),
            "rays": rays,
            "max_residual": bake.max_residual(),
            "mean_residual": bake.mean_residual(),
        })
    )?;
    Ok(())
}

fn cmd_optimize(data: &Path, config: Option<&Path>, path: &Path, metrics: Option<&Path>, out: &mut dyn Write) -> CliResult {
    let cfg: TrainConfig = match config {
        Some(c) => {
            let text = std::fs::read_to_string(c).map_err(|e| io_at(c, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::new("parse", format!("{}: {e}", c.display())))?
        }
        None => TrainConfig::default(),
    };
    let set = load_dataset(data)?.training_set()?;
    let metrics_path = metrics.map_or_else(|| path.with_extension("metrics.jsonl"), Path::to_path_buf);
    let file = std::fs::File::create(&metrics_path).map_err(|e| io_at(&metrics_path, e))?;
    let mut log = std::io::BufWriter::new(file);
    let mut write_err: Option<std::io::Error> = None;
    let outcome = train(&set, &cfg, &mut |rec| {
        if write_err.is_none() {
            let line = serde_json::to_string(rec).expect("metrics serialize");
            if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
                write_err = Some(e);
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(io_at(&metrics_path, e));
    }
    save_scene(&outcome.scene, path)?;
    let last = outcome.metrics.last();
    writeln!(
        out,
        "{}",
        json!({
            "points": outcome.scene.len(),
            "iterations": cfg.stage1_iters + cfg.stage2_iters,
            "final_total": last.map(|m| m.total),
            "metrics": metrics_path,
        })
    )?;
    Ok(())
}

/// Splits `scene.ply:transform.json` at the last colon that is followed by a
/// JSON file name.
fn parse_part(spec: &str) -> CliResult<(PathBuf, Similarity)> {
    match spec.rsplit_once(':') {
        Some((scene, t)) if t.ends_with(".json") => {
            let tp = Path::new(t);
            let text = std::fs::read_to_string(tp).map_err(|e| io_at(tp, e))?;
            let spec: TransformSpec =
                serde_json::from_str(&text).map_err(|e| CliError::new("parse", format!("{t}: {e}")))?;
            let sim = spec
                .to_similarity()
                .map_err(|e| CliError::new("invalid_input", format!("{t}: {e}")))?;
            Ok((PathBuf::from(scene), sim))
        }
        _ => Ok((PathBuf::from(spec), Similarity::identity())),
    }
}

fn cmd_compose(parts: &[String], env: Option<&Path>, rays: usize, path: &Path, out: &mut dyn Write) -> CliResult {
    let mut loaded: Vec<(Scene, Similarity)> = Vec::with_capacity(parts.len());
    for spec in parts {
        let (scene_path, sim) = parse_part(spec)?;
        loaded.push((load_scene(&scene_path)?, sim));
    }
    let first = &loaded[0].0;
    let env = match env {
        Some(e) => load_env_map(e, first.sh_degrees.env)?,
        None => first.env_light.clone(),
    };
    let (scene, bake) = compose_scenes(&loaded, &env, rays)?;
    save_scene(&scene, path)?;
    writeln!(
        out,
        "{}",
        json!({
            "points": scene.len(),
            "parts": parts.len(),
            "max_residual": bake.max_residual(),
            "mean_residual": bake.mean_residual(),
        })
    )?;
    Ok(())
}

fn cmd_relight(
    scene: &Path,
    env: &Path,
    camera: &Path,
    mode: Mode,
    samples: Option<usize>,
    path: &Path,
    out: &mut dyn Write,
) -> CliResult {
    let mut scene = load_scene(scene)?;
    scene.env_light = load_env_map(env, scene.sh_degrees.env)?;
    let camera = load_camera(camera)?;
    let shading = shading(mode, samples).resolve()?;
    let gamma = shading.gamma;
    let req = RenderRequest::new(camera, &[Channel::Pbr]).with_shading(shading);
    let buffers = render(&scene, &req, None)?;
    let bytes = encode_channel(buffers.require(Channel::Pbr)?, Channel::Pbr, gamma, Encoding::Png)?;
    std::fs::write(path, bytes).map_err(|e| io_at(path, e))?;
    writeln!(out, "{}", json!({"path": path, "mode": mode}))?;
    Ok(())
}

fn cmd_serve(scenes: &[PathBuf], host: &str, port: u16, bake_rays: usize, out: &mut dyn Write) -> CliResult {
    let mut named = Vec::with_capacity(scenes.len());
    for p in scenes {
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("scene").to_string();
        named.push((stem, load_scene(p)?));
    }
    let state = crate::api::AppState::new(named, bake_rays)?;
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|e| CliError::new("invalid_input", format!("bad address {host}:{port}: {e}")))?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        writeln!(out, "{}", json!({"listening": format!("http://{}", listener.local_addr()?)}))?;
        out.flush()?;
        axum::serve(listener, crate::api::router(state)).await?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn part_specs() {
        let (p, s) = parse_part("a/b.ply").unwrap();
        assert_eq!(p, PathBuf::from("a/b.ply"));
        assert_eq!(s, Similarity::identity());
        let err = parse_part("x.ply:/nonexistent/t.json").unwrap_err();
        assert_eq!(err.kind, "io");
    }

    #[test]
    fn error_line_is_single_line_json() {
        let e = CliError::new("load", "a\nb");
        let line = e.to_line();
        assert!(!line.contains('\n'));
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["error"], "load");
    }
}
