use axum::extract::rejection::JsonRejection;
use axum::extract::ws::rejection::WebSocketUpgradeRejection;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::Response;
use axum::routing::{get, post};
use axum::{Json, Router};
use fabco::demonstrators::{ingest_human_demo, RawPoint};
use fabco::feasibility::{colorize, feasibility_profile, ColorMapPayload, FeasibilityProfile};
use fabco::policy::rollout;
use fabco::sim::{EnvObservation, Pose};
use fabco::trajectory::Trajectory;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{ApiError, ApiResult};
use crate::jobs::{JobRecord, JobRequest};
use crate::state::{AppState, SessionInfo, BUILTIN_POLICIES};
use crate::store::valid_id;

/// Upper bound on `max_steps` of a streamed rollout.
pub const MAX_ROLLOUT_STEPS: usize = 10_000;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/status", get(status))
        .route("/api/session", get(get_session).post(post_session))
        .route("/api/session/feasibility-history", get(history))
        .route("/api/demos", post(post_demo))
        .route("/api/demos/{id}/feasibility", get(demo_feasibility))
        .route("/api/jobs", get(list_jobs).post(post_job))
        .route("/api/jobs/{id}", get(get_job))
        .route("/api/policies", get(list_policies))
        .route("/api/rollouts", post(post_rollout))
        .route("/api/rollouts/{id}", get(get_rollout))
        .route("/ws/rollouts/{id}", get(stream_rollout))
        .with_state(state)
}

fn body<T>(b: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    b.map(|Json(v)| v).map_err(|e| ApiError::bad_request(e.body_text()))
}

async fn status(State(s): State<AppState>) -> Json<serde_json::Value> {
    let session = s.session.lock().expect("session lock").as_ref().map(|a| a.info());
    Json(json!({
        "dynamics_ready": s.models().is_some(),
        "sigma_w": s.config.sigma_w,
        "dt": s.config.dt,
        "task": s.config.task,
        "session": session,
    }))
}

async fn get_session(State(s): State<AppState>) -> ApiResult<Json<SessionInfo>> {
    s.session
        .lock()
        .expect("session lock")
        .as_ref()
        .map(|a| Json(a.info()))
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no active session"))
}

#[derive(Deserialize)]
struct SessionRequest {
    feedback_enabled: bool,
    #[serde(default = "default_demonstrator")]
    demonstrator: String,
}

fn default_demonstrator() -> String {
    "human".into()
}

async fn post_session(State(s): State<AppState>, b: Result<Json<SessionRequest>, JsonRejection>) -> ApiResult<Json<SessionInfo>> {
    let req = body(b)?;
    Ok(Json(s.start_session(&req.demonstrator, req.feedback_enabled)?))
}

#[derive(Deserialize)]
struct DemoRequest {
    points: Vec<RawPoint>,
    #[serde(default)]
    dt: Option<f64>,
    #[serde(default)]
    obs: Option<EnvObservation<f64>>,
}

#[derive(Serialize, Deserialize)]
pub struct DemoResponse {
    pub trajectory_id: String,
    pub session_id: String,
    pub feedback_enabled: bool,
    pub trajectory: Trajectory<f64>,
    /// Present only when the session shows feedback.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile: Option<FeasibilityProfile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub colormap: Option<ColorMapPayload>,
}

async fn post_demo(State(s): State<AppState>, b: Result<Json<DemoRequest>, JsonRejection>) -> ApiResult<Json<DemoResponse>> {
    let req = body(b)?;
    let dt = req.dt.unwrap_or(s.config.dt);
    let obs = match req.obs {
        Some(o) => EnvObservation::new(o.slot_pose, o.slot_half_width)?,
        None => s.config.task.nominal_obs()?,
    };
    let mut guard = s.session.lock().expect("session lock");
    let active = guard.as_mut().ok_or_else(|| ApiError::conflict("no active session; POST /api/session first"))?;
    let models = s.models().ok_or_else(ApiError::no_dynamics)?;
    let id = s.store.next_id("demo")?;
    let traj = ingest_human_demo(&req.points, dt, obs, id.clone())?;
    let profile = feasibility_profile(&models.fdm, &models.idm, &traj, s.config.sigma_w)?;
    let colormap = colorize(&profile, &traj)?;
    active.session.push(traj.clone(), profile.clone(), None);
    active.session.save_dir(&s.store.path(&s.session_dir(&active.id)))?;
    let fb = active.session.feedback_enabled;
    Ok(Json(DemoResponse {
        trajectory_id: id,
        session_id: active.id.clone(),
        feedback_enabled: fb,
        trajectory: traj,
        profile: fb.then_some(profile),
        colormap: fb.then_some(colormap),
    }))
}

async fn demo_feasibility(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let (session_id, fb, entry) = s.find_demo(&id)?;
    let profile = s.profile_of(&entry)?;
    let colormap = colorize(&profile, &entry.trajectory)?;
    Ok(Json(json!({
        "trajectory_id": id,
        "session_id": session_id,
        "feedback_enabled": fb,
        "profile": profile,
        "colormap": colormap,
    })))
}

#[derive(Serialize, Deserialize)]
pub struct HistoryEntry {
    pub trajectory_id: String,
    pub mean: f64,
    pub min: f64,
    pub n_transitions: usize,
}

#[derive(Serialize, Deserialize)]
pub struct History {
    pub session_id: String,
    pub feedback_enabled: bool,
    pub sigma_w: f64,
    pub demos: Vec<HistoryEntry>,
}

async fn history(State(s): State<AppState>) -> ApiResult<Json<History>> {
    let guard = s.session.lock().expect("session lock");
    let active = guard.as_ref().ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no active session"))?;
    let demos = active
        .session
        .entries
        .iter()
        .map(|e| {
            let p = s.profile_of(e)?;
            Ok(HistoryEntry {
                trajectory_id: e.trajectory.id().to_string(),
                mean: p.mean,
                min: p.min,
                n_transitions: p.len(),
            })
        })
        .collect::<ApiResult<Vec<_>>>()?;
    Ok(Json(History {
        session_id: active.id.clone(),
        feedback_enabled: active.session.feedback_enabled,
        sigma_w: s.config.sigma_w,
        demos,
    }))
}

async fn post_job(State(s): State<AppState>, b: Result<Json<JobRequest>, JsonRejection>) -> ApiResult<(StatusCode, Json<JobRecord>)> {
    let req = body(b)?;
    Ok((StatusCode::ACCEPTED, Json(s.submit_job(req)?)))
}

async fn get_job(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<JobRecord>> {
    s.job(&id).map(Json).ok_or_else(|| ApiError::not_found("job", &id))
}

async fn list_jobs(State(s): State<AppState>) -> Json<Vec<JobRecord>> {
    Json(s.jobs())
}

async fn list_policies(State(s): State<AppState>) -> Json<serde_json::Value> {
    let mut ids: Vec<String> = BUILTIN_POLICIES.iter().map(|p| p.to_string()).collect();
    ids.extend(s.store.list("policies"));
    Json(json!({ "policies": ids }))
}

#[derive(Deserialize)]
struct RolloutRequest {
    policy_id: String,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    max_steps: Option<usize>,
}

/// A recorded rollout; what the socket replays.
#[derive(Clone, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub rollout_id: String,
    pub policy_id: String,
    pub seed: u64,
    pub max_steps: usize,
    pub success: bool,
    pub trajectory: Trajectory<f64>,
}

#[derive(Serialize, Deserialize)]
pub struct RolloutCreated {
    pub rollout_id: String,
    pub policy_id: String,
    pub seed: u64,
    pub max_steps: usize,
    pub start: Pose<f64>,
    pub obs: EnvObservation<f64>,
    pub stream: String,
}

async fn post_rollout(State(s): State<AppState>, b: Result<Json<RolloutRequest>, JsonRejection>) -> ApiResult<Json<RolloutCreated>> {
    let req = body(b)?;
    let max_steps = req.max_steps.unwrap_or(s.config.max_rollout_steps);
    if max_steps == 0 || max_steps > MAX_ROLLOUT_STEPS {
        return Err(ApiError::bad_request(format!("max_steps must be in 1..={MAX_ROLLOUT_STEPS}")));
    }
    let controller = s.controller(&req.policy_id, &s.config)?;
    let start = s.config.task.sample_initial::<f64, _>(&mut ChaCha8Rng::seed_from_u64(req.seed));
    let id = s.store.next_id("rollout")?;
    let cfg = s.config.clone();
    let rid = id.clone();
    let r = tokio::task::spawn_blocking(move || {
        rollout(controller.as_ref(), rid, start, &cfg.limits, cfg.dt, max_steps, &cfg.task.criteria)
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    let record = RolloutRecord {
        rollout_id: id.clone(),
        policy_id: req.policy_id.clone(),
        seed: req.seed,
        max_steps,
        success: r.success,
        trajectory: r.trajectory,
    };
    s.store.write_json(&format!("rollouts/{id}.json"), &record)?;
    Ok(Json(RolloutCreated {
        stream: format!("/ws/rollouts/{id}"),
        rollout_id: id,
        policy_id: req.policy_id,
        seed: req.seed,
        max_steps,
        start: start.pose,
        obs: start.obs,
    }))
}

fn load_rollout(s: &AppState, id: &str) -> ApiResult<RolloutRecord> {
    if !valid_id(id) {
        return Err(ApiError::not_found("rollout", id));
    }
    s.store.read_json(&format!("rollouts/{id}.json"))?.ok_or_else(|| ApiError::not_found("rollout", id))
}

async fn get_rollout(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<RolloutRecord>> {
    load_rollout(&s, &id).map(Json)
}

/// Streams `{"type":"pose",...}` for every state of the rollout, then one
/// `{"type":"end","success":...}` event, then closes.
async fn stream_rollout(
    State(s): State<AppState>,
    Path(id): Path<String>,
    ws: Result<WebSocketUpgrade, WebSocketUpgradeRejection>,
) -> ApiResult<Response> {
    let record = load_rollout(&s, &id)?;
    let ws = ws.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let interval = s.stream_interval;
    Ok(ws.on_upgrade(move |socket| replay(socket, record, interval)))
}

async fn replay(mut socket: WebSocket, record: RolloutRecord, interval: std::time::Duration) {
    let poses = record.trajectory.poses();
    for (i, p) in poses.iter().enumerate() {
        let ev = json!({ "type": "pose", "index": i, "pose": p });
        if socket.send(Message::Text(ev.to_string().into())).await.is_err() {
            return;
        }
        if !interval.is_zero() {
            tokio::time::sleep(interval).await;
        }
    }
    let end = json!({ "type": "end", "success": record.success, "n_poses": poses.len() });
    if socket.send(Message::Text(end.to_string().into())).await.is_ok() {
        let _ = socket.send(Message::Close(None)).await;
    }
}
