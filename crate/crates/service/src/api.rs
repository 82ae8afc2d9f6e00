//! Versioned HTTP API over an atomically swapped scene snapshot.
//!
//! Renders read the latest committed snapshot. Mutations (environment swap,
//! composition) hold a single mutation lock; a second mutation while one is
//! in flight gets `409 Conflict`.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use relight_core::bvh::{build_lbvh, Bvh};
use relight_core::io::{compose_scenes, decode_env_map, Similarity, TransformSpec};
use relight_core::sh::{coeff_count, rotate_sh};
use relight_core::{Aabb, Error, Scene, ShBlock, ShDegrees};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Mutex as AsyncMutex;

use crate::job::{encode_channel, render, Encoding, RenderJob};

/// Id under which requests refer to the committed scene itself.
pub const CURRENT_SCENE: &str = "current";

/// An immutable scene together with its acceleration structure.
#[derive(Debug)]
pub struct Snapshot {
    pub scene: Scene,
    pub bvh: Option<Bvh>,
    pub version: u64,
}

impl Snapshot {
    fn new(scene: Scene, version: u64) -> relight_core::Result<Self> {
        let bvh = if scene.is_empty() { None } else { Some(build_lbvh(&scene)?) };
        Ok(Self { scene, bvh, version })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub id: u64,
    pub state: JobState,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub version: Option<u64>,
}

/// Shared service state.
#[derive(Debug)]
pub struct AppState {
    parts: BTreeMap<String, Arc<Scene>>,
    current: RwLock<Arc<Snapshot>>,
    mutation: Arc<AsyncMutex<()>>,
    jobs: Mutex<BTreeMap<u64, JobStatus>>,
    next_job: AtomicU64,
    bake_rays: usize,
}

impl AppState {
    /// Registers the named scenes; the first one becomes the committed scene.
    pub fn new(scenes: Vec<(String, Scene)>, bake_rays: usize) -> relight_core::Result<Arc<Self>> {
        let first = scenes
            .first()
            .map(|(_, s)| s.clone())
            .ok_or_else(|| Error::InvalidInput("the service needs at least one scene".into()))?;
        let mut parts = BTreeMap::new();
        for (name, scene) in scenes {
            let mut id = name.clone();
            let mut k = 2;
            while parts.contains_key(&id) || id == CURRENT_SCENE {
                id = format!("{name}_{k}");
                k += 1;
            }
            parts.insert(id, Arc::new(scene));
        }
        Ok(Arc::new(Self {
            parts,
            current: RwLock::new(Arc::new(Snapshot::new(first, 0)?)),
            mutation: Arc::new(AsyncMutex::new(())),
            jobs: Mutex::new(BTreeMap::new()),
            next_job: AtomicU64::new(1),
            bake_rays,
        }))
    }

    /// The latest committed snapshot.
    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.current.read().expect("snapshot lock").clone()
    }

    fn commit(&self, scene: Scene) -> relight_core::Result<u64> {
        let version = self.snapshot().version + 1;
        let snap = Arc::new(Snapshot::new(scene, version)?);
        *self.current.write().expect("snapshot lock") = snap;
        Ok(version)
    }

    pub fn scene_ids(&self) -> Vec<String> {
        self.parts.keys().cloned().collect()
    }

    pub fn job(&self, id: u64) -> Option<JobStatus> {
        self.jobs.lock().expect("jobs lock").get(&id).cloned()
    }

    fn set_job(&self, status: JobStatus) {
        self.jobs.lock().expect("jobs lock").insert(status.id, status);
    }
}

/// Error response: status plus a JSON `{"error": message}` body.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::InvalidInput(_) | Error::Parse { .. } => StatusCode::BAD_REQUEST,
            Error::Load { .. } | Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.message}))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_json<T: serde::de::DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/scene", get(get_scene))
        .route("/v1/render", post(post_render))
        .route("/v1/env", post(post_env))
        .route("/v1/compose", post(post_compose))
        .route("/v1/jobs/{id}", get(get_job))
        .with_state(state)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneInfo {
    pub n_points: usize,
    pub bounds: Option<Aabb>,
    pub sh_degrees: ShDegrees,
    pub env_sh: Vec<f64>,
    pub version: u64,
    pub scene_ids: Vec<String>,
}

async fn get_scene(State(state): State<Arc<AppState>>) -> Json<SceneInfo> {
    let snap = state.snapshot();
    let scene = &snap.scene;
    Json(SceneInfo {
        n_points: scene.len(),
        bounds: (!scene.is_empty()).then(|| scene.bounds()),
        sh_degrees: scene.sh_degrees,
        env_sh: scene.env_light.coeffs.clone(),
        version: snap.version,
        scene_ids: state.scene_ids(),
    })
}

async fn post_render(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let job: RenderJob = parse_json(&body)?;
    let req = job.request()?;
    let [channel] = req.channels[..] else {
        return Err(ApiError::bad_request("a render request takes exactly one channel"));
    };
    let encoding = job.encoding.unwrap_or_else(|| Encoding::default_for(channel));
    if encoding == Encoding::Png && !channel.is_color_like() {
        return Err(ApiError::bad_request(format!(
            "channel '{channel}' holds data values; request the fmap encoding"
        )));
    }
    let snap = state.snapshot();
    let bytes = blocking(move || -> relight_core::Result<Vec<u8>> {
        let buffers = render(&snap.scene, &req, snap.bvh.as_ref())?;
        encode_channel(buffers.require(channel)?, channel, req.shading.gamma, encoding)
    })
    .await??;
    Ok(([(header::CONTENT_TYPE, encoding.content_type())], bytes).into_response())
}

/// JSON form of an environment update.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvBody {
    sh: Vec<f64>,
    /// Optional rotation `[w, x, y, z]` applied to the given coefficients.
    #[serde(default)]
    rotation: Option<[f64; 4]>,
}

fn is_json(headers: &HeaderMap) -> bool {
    headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("application/json"))
}

async fn post_env(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ApiResult<Json<serde_json::Value>> {
    let degree = state.snapshot().scene.sh_degrees.env;
    let env = if is_json(&headers) {
        let b: EnvBody = parse_json(&body)?;
        let expected = 3 * coeff_count(degree);
        if b.sh.len() != expected {
            return Err(ApiError::bad_request(format!("sh needs {expected} values, got {}", b.sh.len())));
        }
        let block = ShBlock::from_coeffs(degree, 3, b.sh)?;
        match b.rotation {
            Some(q) => {
                let spec = TransformSpec {
                    rotation: Some(q),
                    ..Default::default()
                };
                rotate_sh(&block, &spec.to_similarity()?.rotation)?
            }
            None => block,
        }
    } else {
        blocking(move || decode_env_map(&body, degree)).await??
    };
    env.validate()?;
    let _guard = state
        .mutation
        .clone()
        .try_lock_owned()
        .map_err(|_| ApiError::new(StatusCode::CONFLICT, "another scene mutation is in flight"))?;
    let mut scene = state.snapshot().scene.clone();
    scene.env_light = env;
    let coeffs = scene.env_light.coeffs.clone();
    let st = state.clone();
    let version = blocking(move || st.commit(scene)).await??;
    Ok(Json(json!({"env_sh": coeffs, "version": version})))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComposePart {
    scene_id: String,
    #[serde(default)]
    transform: TransformSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComposeBody {
    parts: Vec<ComposePart>,
    #[serde(default)]
    rays: Option<usize>,
}

async fn post_compose(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let b: ComposeBody = parse_json(&body)?;
    if b.parts.is_empty() {
        return Err(ApiError::bad_request("compose needs at least one part"));
    }
    let current = state.snapshot();
    let mut resolved: Vec<(Option<Arc<Scene>>, Similarity)> = Vec::with_capacity(b.parts.len());
    for part in &b.parts {
        let sim = part.transform.to_similarity()?;
        let scene = if part.scene_id == CURRENT_SCENE {
            None
        } else {
            let s = state.parts.get(&part.scene_id).cloned();
            Some(s.ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown scene '{}'", part.scene_id)))?)
        };
        resolved.push((scene, sim));
    }
    let rays = b.rays.unwrap_or(state.bake_rays);
    let guard = state
        .mutation
        .clone()
        .try_lock_owned()
        .map_err(|_| ApiError::new(StatusCode::CONFLICT, "another scene mutation is in flight"))?;
    let id = state.next_job.fetch_add(1, Ordering::Relaxed);
    state.set_job(JobStatus {
        id,
        state: JobState::Running,
        error: None,
        n_points: None,
        max_residual: None,
        version: None,
    });
    let env = state.snapshot().scene.env_light.clone();
    let st = state.clone();
    tokio::task::spawn_blocking(move || {
        let _guard = guard;
        let parts: Vec<(Scene, Similarity)> = resolved
            .into_iter()
            .map(|(s, t)| (s.as_deref().unwrap_or(&current.scene).clone(), t))
            .collect();
        let result = compose_scenes(&parts, &env, rays).and_then(|(scene, bake)| {
            let n = scene.len();
            let version = st.commit(scene)?;
            Ok((n, bake.max_residual(), version))
        });
        let status = match result {
            Ok((n, r, v)) => JobStatus {
                id,
                state: JobState::Done,
                error: None,
                n_points: Some(n),
                max_residual: Some(r),
                version: Some(v),
            },
            Err(e) => JobStatus {
                id,
                state: JobState::Failed,
                error: Some(e.to_string()),
                n_points: None,
                max_residual: None,
                version: None,
            },
        };
        st.set_job(status);
    });
    Ok((StatusCode::ACCEPTED, Json(json!({"job_id": id}))).into_response())
}

async fn get_job(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<JobStatus>> {
    id.parse::<u64>()
        .ok()
        .and_then(|id| state.job(id))
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown job '{id}'")))
}
