use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use fabco::demonstrators::{DemoSession, SessionEntry};
use fabco::dynamics::DynModel;
use fabco::feasibility::{feasibility_profile, FeasibilityProfile};
use fabco::pipeline::ExperimentConfig;
use fabco::policy::{Controller, PolicyModel, ScriptedInsertion, ZeroPolicy};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::mpsc;

use crate::error::{ApiError, ApiResult};
use crate::jobs::{spawn_executor, JobRecord, JobRequest, JobStatus};
use crate::store::{valid_id, Store};

/// Built-in controllers every rollout and evaluation endpoint accepts.
pub const BUILTIN_POLICIES: [&str; 2] = ["scripted", "zero"];

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub experiment: ExperimentConfig,
    /// Delay between streamed rollout events.
    pub stream_interval: Duration,
}

pub struct Models {
    pub idm: DynModel<f64>,
    pub fdm: DynModel<f64>,
}

pub struct ActiveSession {
    pub id: String,
    pub session: DemoSession,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub demonstrator: String,
    pub feedback_enabled: bool,
    pub n_demos: usize,
}

impl ActiveSession {
    pub fn info(&self) -> SessionInfo {
        SessionInfo {
            session_id: self.id.clone(),
            demonstrator: self.session.demonstrator.clone(),
            feedback_enabled: self.session.feedback_enabled,
            n_demos: self.session.len(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ActivePointer {
    session_id: String,
}

pub type BoxedController = Box<dyn Controller<f64> + Send + Sync>;

pub struct Shared {
    pub store: Store,
    pub config: ExperimentConfig,
    pub stream_interval: Duration,
    models: RwLock<Option<Arc<Models>>>,
    pub session: Mutex<Option<ActiveSession>>,
    jobs: Mutex<BTreeMap<String, JobRecord>>,
    queue: mpsc::UnboundedSender<String>,
}

/// Cheap handle to the service state.
#[derive(Clone)]
pub struct AppState(pub Arc<Shared>);

impl std::ops::Deref for AppState {
    type Target = Shared;
    fn deref(&self) -> &Shared {
        &self.0
    }
}

impl AppState {
    /// Opens (or creates) the data directory and starts the job executor.
    /// Must be called inside a tokio runtime.
    pub fn open(cfg: ServiceConfig) -> ApiResult<Self> {
        cfg.experiment.validate()?;
        let store = Store::open(&cfg.data_dir).map_err(|e| ApiError::internal(format!("{}: {e}", cfg.data_dir.display())))?;
        store.write_json("config.json", &cfg.experiment)?;

        let models = match (store.path("dynamics/idm.json"), store.path("dynamics/fdm.json")) {
            (i, f) if i.exists() && f.exists() => Some(Arc::new(Models { idm: DynModel::load(&i)?, fdm: DynModel::load(&f)? })),
            _ => None,
        };

        let session = match store.read_json::<ActivePointer>("sessions/active.json")? {
            Some(p) => Some(ActiveSession {
                session: DemoSession::load_dir(&store.path(&format!("sessions/{}", p.session_id)))?,
                id: p.session_id,
            }),
            None => None,
        };

        // a restart interrupts whatever was queued or running
        let mut jobs = BTreeMap::new();
        for id in store.list("jobs") {
            if let Some(mut rec) = store.read_json::<JobRecord>(&format!("jobs/{id}.json"))? {
                if !rec.status.is_terminal() {
                    rec.advance(JobStatus::Failed);
                    rec.error = Some("interrupted by a service restart".into());
                    store.write_json(&format!("jobs/{id}.json"), &rec)?;
                }
                jobs.insert(id, rec);
            }
        }

        let (tx, rx) = mpsc::unbounded_channel();
        let shared = Arc::new(Shared {
            store,
            config: cfg.experiment,
            stream_interval: cfg.stream_interval,
            models: RwLock::new(models),
            session: Mutex::new(session),
            jobs: Mutex::new(jobs),
            queue: tx,
        });
        spawn_executor(Arc::downgrade(&shared), rx);
        Ok(Self(shared))
    }
}

impl Shared {
    pub fn models(&self) -> Option<Arc<Models>> {
        self.models.read().expect("models lock").clone()
    }

    pub(crate) fn install_models(&self, m: Models) {
        *self.models.write().expect("models lock") = Some(Arc::new(m));
    }

    pub fn session_dir(&self, id: &str) -> String {
        format!("sessions/{id}")
    }

    pub fn load_session(&self, id: &str) -> ApiResult<DemoSession> {
        let dir = self.store.path(&self.session_dir(id));
        if !valid_id(id) || !dir.join("session.json").exists() {
            return Err(ApiError::not_found("session", id));
        }
        Ok(DemoSession::load_dir(&dir)?)
    }

    /// Makes a new session active, unless the active one is still empty and
    /// already has the requested settings.
    pub fn start_session(&self, demonstrator: &str, feedback_enabled: bool) -> ApiResult<SessionInfo> {
        let mut guard = self.session.lock().expect("session lock");
        if let Some(a) = guard.as_ref() {
            if a.session.is_empty() && a.session.feedback_enabled == feedback_enabled && a.session.demonstrator == demonstrator {
                return Ok(a.info());
            }
        }
        let id = self.store.next_id("session")?;
        let session = DemoSession::new(demonstrator, feedback_enabled);
        session.save_dir(&self.store.path(&self.session_dir(&id)))?;
        self.store.write_json("sessions/active.json", &ActivePointer { session_id: id.clone() })?;
        let active = ActiveSession { id, session };
        let info = active.info();
        *guard = Some(active);
        Ok(info)
    }

    /// Locates a stored demonstration: its session id and entry.
    pub fn find_demo(&self, demo_id: &str) -> ApiResult<(String, bool, SessionEntry)> {
        if let Some(a) = self.session.lock().expect("session lock").as_ref() {
            if let Some(e) = a.session.entries.iter().find(|e| e.trajectory.id() == demo_id) {
                return Ok((a.id.clone(), a.session.feedback_enabled, e.clone()));
            }
        }
        let dirs = std::fs::read_dir(self.store.path("sessions")).into_iter().flatten().flatten();
        for d in dirs.filter(|d| d.path().is_dir()) {
            let sid = d.file_name().to_string_lossy().into_owned();
            if let Ok(s) = DemoSession::load_dir(&d.path()) {
                if let Some(e) = s.entries.iter().find(|e| e.trajectory.id() == demo_id) {
                    return Ok((sid, s.feedback_enabled, e.clone()));
                }
            }
        }
        Err(ApiError::not_found("demonstration", demo_id))
    }

    /// The stored profile when it was computed with the current `sigma_w`,
    /// otherwise a fresh one from the loaded models.
    pub fn profile_of(&self, entry: &SessionEntry) -> ApiResult<FeasibilityProfile> {
        match &entry.profile {
            Some(p) if p.sigma_w == self.config.sigma_w => Ok(p.clone()),
            _ => {
                let m = self.models().ok_or_else(ApiError::no_dynamics)?;
                Ok(feasibility_profile(&m.fdm, &m.idm, &entry.trajectory, self.config.sigma_w)?)
            }
        }
    }

    pub fn policy_exists(&self, id: &str) -> bool {
        BUILTIN_POLICIES.contains(&id) || (valid_id(id) && self.store.path(&format!("policies/{id}.json")).exists())
    }

    pub fn controller(&self, id: &str, cfg: &ExperimentConfig) -> ApiResult<BoxedController> {
        match id {
            "scripted" => Ok(Box::new(ScriptedInsertion {
                limits: cfg.limits,
                dt: cfg.dt,
                hover_height: cfg.demonstrator.hover_height,
            })),
            "zero" => Ok(Box::new(ZeroPolicy)),
            _ if self.policy_exists(id) => Ok(Box::new(PolicyModel::<f64>::load(&self.store.path(&format!("policies/{id}.json")))?)),
            _ => Err(ApiError::not_found("policy", id)),
        }
    }

    pub fn job(&self, id: &str) -> Option<JobRecord> {
        self.jobs.lock().expect("jobs lock").get(id).cloned()
    }

    pub fn jobs(&self) -> Vec<JobRecord> {
        self.jobs.lock().expect("jobs lock").values().cloned().collect()
    }

    /// Validates a request against the current state and queues it.
    pub fn submit_job(&self, req: JobRequest) -> ApiResult<JobRecord> {
        use crate::jobs::{merge_config, JobKind};
        let config = merge_config(&self.config, &req.config)?;
        let mut session_id = None;
        let mut policy_id = None;
        match req.kind {
            JobKind::TrainDynamics => {}
            JobKind::TrainPolicy => {
                if self.models().is_none() {
                    return Err(ApiError::no_dynamics());
                }
                let sid = match req.session_id {
                    Some(s) => s,
                    None => self
                        .session
                        .lock()
                        .expect("session lock")
                        .as_ref()
                        .map(|a| a.id.clone())
                        .ok_or_else(|| ApiError::conflict("no active session; POST /api/session first"))?,
                };
                if self.load_session(&sid)?.is_empty() {
                    return Err(ApiError::conflict(format!("session `{sid}` has no demonstrations")));
                }
                session_id = Some(sid);
            }
            JobKind::Evaluate => {
                let pid = req.policy_id.ok_or_else(|| ApiError::bad_request("evaluate needs `policy_id`"))?;
                if !self.policy_exists(&pid) {
                    return Err(ApiError::not_found("policy", &pid));
                }
                policy_id = Some(pid);
            }
        }
        let rec = JobRecord {
            id: self.store.next_id("job")?,
            kind: req.kind,
            status: JobStatus::Queued,
            progress: 0.0,
            variant: req.variant,
            session_id,
            policy_id,
            config,
            result: None,
            error: None,
        };
        self.store.write_json(&format!("jobs/{}.json", rec.id), &rec)?;
        self.jobs.lock().expect("jobs lock").insert(rec.id.clone(), rec.clone());
        self.queue.send(rec.id.clone()).map_err(|_| ApiError::internal("job executor stopped"))?;
        Ok(rec)
    }

    /// Applies a forward status change and persists it. False when the job
    /// is unknown or the move would go backwards.
    pub(crate) fn set_status(&self, id: &str, to: JobStatus, result: Option<Value>, error: Option<String>) -> bool {
        let mut jobs = self.jobs.lock().expect("jobs lock");
        let Some(rec) = jobs.get_mut(id) else { return false };
        if !rec.advance(to) {
            return false;
        }
        rec.result = result;
        rec.error = error;
        if let Err(e) = self.store.write_json(&format!("jobs/{id}.json"), rec) {
            tracing::error!("persisting job {id}: {}", e.message);
        }
        true
    }

    pub(crate) fn set_progress(&self, id: &str, fraction: f64) {
        if let Some(rec) = self.jobs.lock().expect("jobs lock").get_mut(id) {
            if rec.status == JobStatus::Running {
                rec.progress = rec.progress.max(fraction.clamp(0.0, 1.0));
            }
        }
    }
}
