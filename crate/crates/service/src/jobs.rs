//! Training and evaluation jobs, run one at a time in submission order.

use std::sync::{Arc, Weak};

use fabco::dynamics::{build_dataset, train_fdm, train_idm};
use fabco::pipeline::{collect_robot_data, evaluate_policy, save_robot_data, ExperimentConfig};
use fabco::policy::{build_weighted_set, train_policy, Variant};
use fabco::seed::derive_seed;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::mpsc;

use crate::error::{ApiError, ApiResult};
use crate::state::{Models, Shared};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    TrainDynamics,
    TrainPolicy,
    Evaluate,
}

/// Declared in lifecycle order; a record only ever moves to a later status.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::Failed)
    }
}

/// Body of `POST /api/jobs`. `config` is a partial experiment
/// configuration merged over the service's own.
#[derive(Clone, Debug, Deserialize)]
pub struct JobRequest {
    pub kind: JobKind,
    #[serde(default)]
    pub config: Value,
    #[serde(default)]
    pub variant: Option<Variant>,
    #[serde(default)]
    pub session_id: Option<String>,
    #[serde(default)]
    pub policy_id: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: String,
    pub kind: JobKind,
    pub status: JobStatus,
    /// Fraction in [0, 1].
    pub progress: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_id: Option<String>,
    pub config: ExperimentConfig,
    /// Artifact locations relative to the data directory; present iff done.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl JobRecord {
    /// Moves to `to`; returns false (and changes nothing) for a backward move.
    pub fn advance(&mut self, to: JobStatus) -> bool {
        if to <= self.status || self.status.is_terminal() {
            return false;
        }
        self.status = to;
        if to.is_terminal() {
            self.progress = 1.0;
        }
        true
    }
}

/// Overlays `fragment` on `base`, recursing into objects.
pub fn merge_config(base: &ExperimentConfig, fragment: &Value) -> ApiResult<ExperimentConfig> {
    fn merge(dst: &mut Value, src: &Value) {
        match (dst, src) {
            (Value::Object(d), Value::Object(s)) => {
                for (k, v) in s {
                    match d.get_mut(k) {
                        Some(slot) => merge(slot, v),
                        None => {
                            d.insert(k.clone(), v.clone());
                        }
                    }
                }
            }
            (dst, src) => *dst = src.clone(),
        }
    }
    let mut v = serde_json::to_value(base).map_err(|e| ApiError::internal(e.to_string()))?;
    match fragment {
        Value::Null => {}
        Value::Object(_) => merge(&mut v, fragment),
        _ => return Err(ApiError::bad_request("`config` must be an object")),
    }
    let mut cfg: ExperimentConfig =
        serde_json::from_value(v).map_err(|e| ApiError::bad_request(format!("invalid config: {e}")))?;
    cfg.output_dir = None;
    cfg.validate()?;
    Ok(cfg)
}

pub(crate) fn spawn_executor(shared: Weak<Shared>, mut rx: mpsc::UnboundedReceiver<String>) {
    tokio::spawn(async move {
        while let Some(id) = rx.recv().await {
            let Some(state) = shared.upgrade() else { break };
            if !state.set_status(&id, JobStatus::Running, None, None) {
                continue;
            }
            let runner = Arc::clone(&state);
            let job = id.clone();
            drop(state);
            let outcome = tokio::task::spawn_blocking(move || run(&runner, &job)).await;
            let Some(state) = shared.upgrade() else { break };
            match outcome {
                Ok(Ok(result)) => state.set_status(&id, JobStatus::Done, Some(result), None),
                Ok(Err(e)) => state.set_status(&id, JobStatus::Failed, None, Some(e.message)),
                Err(e) => state.set_status(&id, JobStatus::Failed, None, Some(format!("job panicked: {e}"))),
            };
        }
    });
}

fn run(state: &Shared, id: &str) -> ApiResult<Value> {
    let rec = state.job(id).ok_or_else(|| ApiError::not_found("job", id))?;
    let progress = |f: f64| state.set_progress(id, f);
    match rec.kind {
        JobKind::TrainDynamics => train_dynamics(state, &rec.config, &progress),
        JobKind::TrainPolicy => train_policy_job(state, &rec, &progress),
        JobKind::Evaluate => evaluate(state, &rec),
    }
}

fn train_dynamics(state: &Shared, cfg: &ExperimentConfig, progress: &dyn Fn(f64)) -> ApiResult<Value> {
    let trajs = collect_robot_data(cfg)?;
    save_robot_data(&state.store.path("robot"), &trajs, &cfg.limits, cfg.dt)?;
    progress(0.1);
    let data = build_dataset(&trajs)?;
    let mut idm_cfg = cfg.idm.clone();
    idm_cfg.train.seed = derive_seed(cfg.seed, "idm");
    let mut fdm_cfg = cfg.fdm.clone();
    fdm_cfg.train.seed = derive_seed(cfg.seed, "fdm");
    let idm = train_idm(&data, &idm_cfg)?;
    progress(0.55);
    let fdm = train_fdm(&data, &fdm_cfg)?;
    progress(0.95);
    idm.model.save(&state.store.path("dynamics/idm.json"))?;
    fdm.model.save(&state.store.path("dynamics/fdm.json"))?;
    state.store.write_json("dynamics/manifest.json", &data.manifest(&cfg.limits, cfg.dt))?;
    state.install_models(Models { idm: idm.model, fdm: fdm.model });
    Ok(json!({
        "idm": "dynamics/idm.json",
        "fdm": "dynamics/fdm.json",
        "manifest": "dynamics/manifest.json",
        "robot": "robot/trajectories.jsonl",
        "n_transitions": data.len(),
        "idm_best_val_loss": idm.outcome.best_val_loss,
        "fdm_best_val_loss": fdm.outcome.best_val_loss,
    }))
}

fn train_policy_job(state: &Shared, rec: &JobRecord, progress: &dyn Fn(f64)) -> ApiResult<Value> {
    let cfg = &rec.config;
    let models = state.models().ok_or_else(ApiError::no_dynamics)?;
    let session_id = rec.session_id.as_deref().ok_or_else(|| ApiError::bad_request("no session"))?;
    let session = state.load_session(session_id)?;
    let variant = rec.variant.unwrap_or(Variant::Fabco);
    let set = build_weighted_set(&session.trajectories(), &models.idm, &models.fdm, cfg.sigma_w, variant.weighted())?;
    progress(0.1);
    let mut pcfg = cfg.policy.clone();
    pcfg.train.seed = derive_seed(cfg.seed, "policy");
    let trained = train_policy(&set, &pcfg, variant)?;
    let policy_id = state.store.next_id("policy")?;
    let path = format!("policies/{policy_id}.json");
    let mut ck = trained.model.to_checkpoint();
    ck.meta.insert("session_id".into(), json!(session_id));
    ck.meta.insert("n_records".into(), json!(set.len()));
    ck.meta.insert("best_epoch".into(), json!(trained.outcome.best_epoch));
    ck.save(&state.store.path(&path))?;
    Ok(json!({
        "policy_id": policy_id,
        "path": path,
        "variant": variant,
        "session_id": session_id,
        "n_records": set.len(),
        "best_val_loss": trained.outcome.best_val_loss,
    }))
}

fn evaluate(state: &Shared, rec: &JobRecord) -> ApiResult<Value> {
    let policy_id = rec.policy_id.as_deref().ok_or_else(|| ApiError::bad_request("no policy_id"))?;
    let controller = state.controller(policy_id, &rec.config)?;
    let eval = evaluate_policy(controller.as_ref(), &rec.config.eval_config())?;
    let path = format!("evaluations/{}.json", rec.id);
    state.store.write_json(&path, &eval)?;
    Ok(json!({
        "evaluation": path,
        "policy_id": policy_id,
        "successes": eval.successes,
        "n_rollouts": eval.n_rollouts,
        "rate": eval.rate,
        "summary": eval.summary(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> JobRecord {
        JobRecord {
            id: "job-1".into(),
            kind: JobKind::Evaluate,
            status: JobStatus::Queued,
            progress: 0.0,
            variant: None,
            session_id: None,
            policy_id: None,
            config: ExperimentConfig::quick(),
            result: None,
            error: None,
        }
    }

    #[test]
    fn status_only_moves_forward() {
        let mut r = record();
        assert!(!r.advance(JobStatus::Queued));
        assert!(r.advance(JobStatus::Running));
        assert!(!r.advance(JobStatus::Queued));
        assert!(r.advance(JobStatus::Done));
        assert_eq!(r.progress, 1.0);
        assert!(!r.advance(JobStatus::Failed));
        assert_eq!(r.status, JobStatus::Done);
    }

    #[test]
    fn queued_job_can_fail_directly() {
        let mut r = record();
        assert!(r.advance(JobStatus::Failed));
        assert!(!r.advance(JobStatus::Running));
    }

    #[test]
    fn config_fragment_overrides_nested_fields() {
        let base = ExperimentConfig::quick();
        let c = merge_config(&base, &json!({ "seed": 7, "policy": { "train": { "epochs": 3 } } })).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.policy.train.epochs, 3);
        assert_eq!(c.policy.train.batch_size, base.policy.train.batch_size);
        assert_eq!(c.policy.hidden, base.policy.hidden);
        assert_eq!(merge_config(&base, &Value::Null).unwrap(), base);
    }

    #[test]
    fn bad_fragments_are_rejected() {
        let base = ExperimentConfig::quick();
        assert!(merge_config(&base, &json!([1])).is_err());
        assert!(merge_config(&base, &json!({ "sigma_w": -1.0 })).is_err());
        assert!(merge_config(&base, &json!({ "seed": "x" })).is_err());
    }

    #[test]
    fn job_kinds_use_snake_case() {
        let r: JobRequest = serde_json::from_value(json!({ "kind": "train_dynamics" })).unwrap();
        assert_eq!(r.kind, JobKind::TrainDynamics);
        assert_eq!(serde_json::to_value(JobStatus::Running).unwrap(), json!("running"));
    }
}
