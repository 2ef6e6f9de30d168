//! Inverse and forward dynamics models learned from robot motion data.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    AffineMap, Checkpoint, NetSpec, Normalization, OutputActivation, Regressor, Sample,
    TrainConfig, TrainOutcome, WeightedL1,
};
use crate::scalar::Scalar;
use crate::sim::{Action, Pose, RobotLimits, ACTION_DIM, POSE_DIM};
use crate::trajectory::{Trajectory, TrajectorySource};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Idm,
    Fdm,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Idm => "idm",
            ModelKind::Fdm => "fdm",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Poses the inverse model sees.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdmContext {
    /// `(p_t, p_{t+1})`
    #[default]
    TwoPose,
    /// `(p_{t-1}, p_t, p_{t+1})`; at the first step `p_{t-1} = p_t`.
    ThreePose,
}

impl IdmContext {
    pub fn n_poses(self) -> usize {
        match self {
            IdmContext::TwoPose => 2,
            IdmContext::ThreePose => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition<T> {
    /// Pose before `pose`, or `pose` itself at the start of a trajectory.
    pub prev: Pose<T>,
    pub pose: Pose<T>,
    pub next: Pose<T>,
    pub action: Action<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynDataset<T> {
    pub transitions: Vec<Transition<T>>,
    /// Ids of the source trajectories, in order.
    pub provenance: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedAudit {
    pub checked: usize,
    pub violations: usize,
    /// Largest `|displacement| / (max_speed * dt)` over all components.
    pub max_ratio: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub trajectory_ids: Vec<String>,
    pub n_trajectories: usize,
    pub n_transitions: usize,
    pub speed_audit: SpeedAudit,
}

/// Extracts every transition of robot random-motion trajectories, in input
/// order.
pub fn build_dataset<T: Scalar>(trajs: &[Trajectory<T>]) -> Result<DynDataset<T>> {
    if trajs.is_empty() {
        return Err(Error::Empty("robot trajectories"));
    }
    let mut transitions = Vec::new();
    let mut provenance = Vec::with_capacity(trajs.len());
    for t in trajs {
        if t.source() != TrajectorySource::RobotRandom {
            return Err(Error::WrongSource {
                id: t.id().to_string(),
                source_kind: t.source().to_string(),
                expected: TrajectorySource::RobotRandom.to_string(),
            });
        }
        let actions = t.actions().ok_or_else(|| Error::MissingActions {
            id: t.id().to_string(),
        })?;
        let poses = t.poses();
        for (i, a) in actions.iter().enumerate() {
            transitions.push(Transition {
                prev: poses[i.saturating_sub(1)],
                pose: poses[i],
                next: poses[i + 1],
                action: *a,
            });
        }
        provenance.push(t.id().to_string());
    }
    if transitions.is_empty() {
        return Err(Error::Empty("robot transitions"));
    }
    Ok(DynDataset {
        transitions,
        provenance,
    })
}

impl<T: Scalar> DynDataset<T> {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn speed_audit(&self, limits: &RobotLimits<T>, dt: T) -> SpeedAudit {
        let bound = limits.step_bound(dt);
        let tol = T::of(1e-9);
        let mut violations = 0;
        let mut max_ratio: f64 = 0.0;
        for tr in &self.transitions {
            let d = tr.pose.delta_to(&tr.next);
            let mut bad = false;
            for i in 0..3 {
                let r = (d[i].abs() / bound[i]).to_f64_lossy();
                max_ratio = max_ratio.max(r);
                bad |= d[i].abs() > bound[i] * (T::one() + tol);
            }
            violations += bad as usize;
        }
        SpeedAudit {
            checked: self.transitions.len(),
            violations,
            max_ratio,
            passed: violations == 0,
        }
    }

    pub fn manifest(&self, limits: &RobotLimits<T>, dt: T) -> DatasetManifest {
        DatasetManifest {
            trajectory_ids: self.provenance.clone(),
            n_trajectories: self.provenance.len(),
            n_transitions: self.transitions.len(),
            speed_audit: self.speed_audit(limits, dt),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynModelConfig {
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub idm_context: IdmContext,
}

impl Default for DynModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 256, 256, 64],
            train: TrainConfig::default(),
            idm_context: IdmContext::TwoPose,
        }
    }
}

fn pose_map() -> AffineMap {
    AffineMap::uniform(POSE_DIM, 0.0, 1.0).unwrap()
}

fn action_map() -> AffineMap {
    AffineMap::uniform(ACTION_DIM, -1.0, 1.0).unwrap()
}

fn idm_input<T: Scalar>(ctx: IdmContext, prev: Pose<T>, pose: Pose<T>, next: Pose<T>) -> Vec<T> {
    let mut v = Vec::with_capacity(9);
    if ctx == IdmContext::ThreePose {
        v.extend_from_slice(&prev.to_array());
    }
    v.extend_from_slice(&pose.to_array());
    v.extend_from_slice(&next.to_array());
    v
}

fn fdm_input<T: Scalar>(pose: Pose<T>, action: Action<T>) -> Vec<T> {
    let mut v = pose.to_array().to_vec();
    v.extend_from_slice(&action.to_array());
    v
}

/// A trained inverse or forward dynamics model.
#[derive(Clone, Debug, PartialEq)]
pub struct DynModel<T> {
    kind: ModelKind,
    context: IdmContext,
    net: Regressor<T>,
    best_val_loss: f64,
}

/// A model together with its training curves.
#[derive(Clone, Debug)]
pub struct TrainedDyn<T> {
    pub model: DynModel<T>,
    pub outcome: TrainOutcome<T>,
}

impl<T: Scalar> DynModel<T> {
    fn normalization(kind: ModelKind, context: IdmContext) -> Normalization {
        match kind {
            ModelKind::Idm => {
                let mut input = pose_map();
                for _ in 1..context.n_poses() {
                    input = input.concat(&pose_map());
                }
                Normalization {
                    input,
                    output: action_map(),
                }
            }
            ModelKind::Fdm => Normalization {
                input: pose_map().concat(&action_map()),
                output: pose_map(),
            },
        }
    }

    fn spec(kind: ModelKind, context: IdmContext, hidden: &[usize]) -> Result<NetSpec> {
        let (i, o) = match kind {
            ModelKind::Idm => (POSE_DIM * context.n_poses(), ACTION_DIM),
            ModelKind::Fdm => (POSE_DIM + ACTION_DIM, POSE_DIM),
        };
        NetSpec::with_hidden(i, hidden, o, OutputActivation::Sigmoid)
    }

    fn fit(kind: ModelKind, data: &DynDataset<T>, cfg: &DynModelConfig) -> Result<TrainedDyn<T>> {
        if data.is_empty() {
            return Err(Error::Empty("dynamics dataset"));
        }
        let context = match kind {
            ModelKind::Idm => cfg.idm_context,
            ModelKind::Fdm => IdmContext::TwoPose,
        };
        let samples: Vec<Sample<T>> = data
            .transitions
            .iter()
            .map(|tr| match kind {
                ModelKind::Idm => Sample::unweighted(
                    idm_input(context, tr.prev, tr.pose, tr.next),
                    tr.action.to_array().to_vec(),
                ),
                ModelKind::Fdm => Sample::unweighted(
                    fdm_input(tr.pose, tr.action),
                    tr.next.to_array().to_vec(),
                ),
            })
            .collect();
        let spec = Self::spec(kind, context, &cfg.hidden)?;
        let (net, outcome) = Regressor::fit(
            &spec,
            Self::normalization(kind, context),
            &samples,
            &cfg.train,
            &WeightedL1,
        )?;
        Ok(TrainedDyn {
            model: DynModel {
                kind,
                context,
                net,
                best_val_loss: outcome.best_val_loss.to_f64_lossy(),
            },
            outcome,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn context(&self) -> IdmContext {
        self.context
    }

    pub fn regressor(&self) -> &Regressor<T> {
        &self.net
    }

    pub fn best_val_loss(&self) -> f64 {
        self.best_val_loss
    }

    fn expect(&self, kind: ModelKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::WrongModelKind {
                expected: kind.name(),
                got: self.kind.name(),
            });
        }
        Ok(())
    }

    /// Action that moves the robot from `pose` to `next`, clipped to `[-1, 1]`.
    pub fn predict_action(&self, pose: Pose<T>, next: Pose<T>) -> Result<Action<T>> {
        self.predict_action_from(pose, pose, next)
    }

    /// As [`predict_action`](Self::predict_action) with an explicit previous
    /// pose, which only a three-pose model uses.
    pub fn predict_action_from(&self, prev: Pose<T>, pose: Pose<T>, next: Pose<T>) -> Result<Action<T>> {
        self.expect(ModelKind::Idm)?;
        let y = self.net.predict(&idm_input(self.context, prev, pose, next))?;
        Ok(Action::new(y[0], y[1], y[2]).clipped())
    }

    /// Pose reached from `pose` under `action`, clamped to the workspace.
    pub fn predict_pose(&self, pose: Pose<T>, action: Action<T>) -> Result<Pose<T>> {
        self.expect(ModelKind::Fdm)?;
        let y = self.net.predict(&fdm_input(pose, action))?;
        Ok(Pose::new(y[0], y[1], y[2]).clamp_workspace())
    }

    pub fn to_checkpoint(&self) -> Checkpoint<T> {
        let mut meta = BTreeMap::new();
        meta.insert("kind".to_string(), serde_json::to_value(self.kind).unwrap());
        meta.insert(
            "idm_context".to_string(),
            serde_json::to_value(self.context).unwrap(),
        );
        self.net.to_checkpoint(self.best_val_loss, meta)
    }

    pub fn from_checkpoint(ck: &Checkpoint<T>) -> Result<Self> {
        let field = |k: &str| {
            ck.meta
                .get(k)
                .cloned()
                .ok_or_else(|| Error::InvalidSpec(format!("checkpoint meta lacks `{k}`")))
        };
        let kind: ModelKind = serde_json::from_value(field("kind")?)?;
        let context: IdmContext = serde_json::from_value(field("idm_context")?)?;
        let net = Regressor::from_checkpoint(ck)?;
        if net.normalization() != &Self::normalization(kind, context) {
            return Err(Error::InvalidSpec(format!(
                "normalization does not match a {kind} model"
            )));
        }
        Ok(Self {
            kind,
            context,
            net,
            best_val_loss: ck.best_val_loss,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Fits `a_t = f(p_t, p_{t+1})` with uniform weights.
pub fn train_idm<T: Scalar>(data: &DynDataset<T>, cfg: &DynModelConfig) -> Result<TrainedDyn<T>> {
    DynModel::fit(ModelKind::Idm, data, cfg)
}

/// Fits `p_{t+1} = f(p_t, a_t)` with uniform weights.
pub fn train_fdm<T: Scalar>(data: &DynDataset<T>, cfg: &DynModelConfig) -> Result<TrainedDyn<T>> {
    DynModel::fit(ModelKind::Fdm, data, cfg)
}
