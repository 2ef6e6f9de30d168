//! Behavior cloning from inferred actions, with optional feasibility
//! weighting, and closed-loop rollouts.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dynamics::DynModel;
use crate::error::{Error, Result};
use crate::feasibility::{feasibility_profile, FeasibilityProfile};
use crate::nn::{
    AffineMap, Checkpoint, NetSpec, Normalization, Objective, OutputActivation, PlainL1,
    Regressor, Sample, TrainConfig, TrainOutcome, WeightedL1,
};
use crate::scalar::Scalar;
use crate::sim::{
    track_braking, Action, Episode, InsertionMonitor, Pose, RobotLimits, State, SuccessCriteria,
    ACTION_DIM, STATE_DIM,
};
use crate::trajectory::{Trajectory, TrajectorySource};

/// The four ablation variants: which demonstration arm trains the policy and
/// whether feasibility weights are applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Fabco,
    FabcoNoWeight,
    FabcoNoFb,
    Bco,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Fabco,
        Variant::FabcoNoWeight,
        Variant::FabcoNoFb,
        Variant::Bco,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Fabco => "fabco",
            Variant::FabcoNoWeight => "fabco_no_weight",
            Variant::FabcoNoFb => "fabco_no_fb",
            Variant::Bco => "bco",
        }
    }

    /// Whether the policy learns from demonstrations collected with feedback.
    pub fn uses_feedback_demos(self) -> bool {
        matches!(self, Variant::Fabco | Variant::FabcoNoWeight)
    }

    pub fn weighted(self) -> bool {
        matches!(self, Variant::Fabco | Variant::FabcoNoFb)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightedRecord<T> {
    pub state: State<T>,
    /// Action inferred by the inverse model.
    pub action: Action<T>,
    pub weight: f64,
    pub demo_id: String,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct WeightedDemoSet<T> {
    pub records: Vec<WeightedRecord<T>>,
}

impl<T: Scalar> WeightedDemoSet<T> {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn samples(&self) -> Vec<Sample<T>> {
        self.records
            .iter()
            .map(|r| {
                Sample::new(
                    r.state.features().to_vec(),
                    r.action.to_array().to_vec(),
                    T::of(r.weight),
                )
            })
            .collect()
    }
}

/// Labels every transition of `demos` with the inverse model's action and,
/// when `weighted`, its feasibility; otherwise every weight is 1.
pub fn build_weighted_set<T: Scalar>(
    demos: &[Trajectory<T>],
    idm: &DynModel<T>,
    fdm: &DynModel<T>,
    sigma_w: f64,
    weighted: bool,
) -> Result<WeightedDemoSet<T>> {
    let profiles = demos
        .iter()
        .map(|d| feasibility_profile(fdm, idm, d, sigma_w))
        .collect::<Result<Vec<_>>>()?;
    build_weighted_set_with(demos, &profiles, idm, weighted)
}

/// As [`build_weighted_set`] with precomputed feasibility profiles.
pub fn build_weighted_set_with<T: Scalar>(
    demos: &[Trajectory<T>],
    profiles: &[FeasibilityProfile],
    idm: &DynModel<T>,
    weighted: bool,
) -> Result<WeightedDemoSet<T>> {
    if demos.is_empty() {
        return Err(Error::Empty("demonstrations"));
    }
    if profiles.len() != demos.len() {
        return Err(Error::DimensionMismatch {
            context: "feasibility profiles",
            expected: demos.len(),
            got: profiles.len(),
        });
    }
    let mut records = Vec::new();
    for (d, prof) in demos.iter().zip(profiles) {
        d.require_len(2)?;
        if prof.len() + 1 != d.len() {
            return Err(Error::DimensionMismatch {
                context: "feasibility profile length",
                expected: d.len() - 1,
                got: prof.len(),
            });
        }
        let p = d.poses();
        for i in 0..p.len() - 1 {
            records.push(WeightedRecord {
                state: d.state(i),
                action: idm.predict_action_from(p[i.saturating_sub(1)], p[i], p[i + 1])?,
                weight: if weighted { prof.weights[i] } else { 1.0 },
                demo_id: d.id().to_string(),
            });
        }
    }
    Ok(WeightedDemoSet { records })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 128],
            train: TrainConfig::default(),
        }
    }
}

/// Upper bound of the slot half-width feature range.
const MAX_HALF_WIDTH: f64 = 0.25;

fn policy_normalization() -> Normalization {
    let mut lo = vec![0.0; STATE_DIM];
    let mut hi = vec![1.0; STATE_DIM];
    lo[STATE_DIM - 1] = 0.0;
    hi[STATE_DIM - 1] = MAX_HALF_WIDTH;
    Normalization {
        input: AffineMap::new(lo, hi).unwrap(),
        output: AffineMap::uniform(ACTION_DIM, -1.0, 1.0).unwrap(),
    }
}

/// Learned state-to-action policy.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyModel<T> {
    variant: Variant,
    net: Regressor<T>,
    best_val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedPolicy<T> {
    pub model: PolicyModel<T>,
    pub outcome: TrainOutcome<T>,
}

fn fit_policy<T: Scalar, O: Objective<T>>(
    set: &WeightedDemoSet<T>,
    cfg: &PolicyConfig,
    variant: Variant,
    objective: &O,
) -> Result<TrainedPolicy<T>> {
    if set.is_empty() {
        return Err(Error::Empty("weighted demonstration set"));
    }
    let spec = NetSpec::with_hidden(STATE_DIM, &cfg.hidden, ACTION_DIM, OutputActivation::Identity)?;
    let (net, outcome) = Regressor::fit(&spec, policy_normalization(), &set.samples(), &cfg.train, objective)?;
    Ok(TrainedPolicy {
        model: PolicyModel {
            variant,
            net,
            best_val_loss: outcome.best_val_loss.to_f64_lossy(),
        },
        outcome,
    })
}

/// Minimizes the weighted L1 objective `sum_t w_t |a_t - pi(s_t)|`.
pub fn train_policy<T: Scalar>(
    set: &WeightedDemoSet<T>,
    cfg: &PolicyConfig,
    variant: Variant,
) -> Result<TrainedPolicy<T>> {
    fit_policy(set, cfg, variant, &WeightedL1)
}

/// Plain behavior cloning: minimizes `sum_t |a_t - pi(s_t)|`, ignoring any
/// record weights.
pub fn train_bco_unweighted<T: Scalar>(set: &WeightedDemoSet<T>, cfg: &PolicyConfig) -> Result<TrainedPolicy<T>> {
    fit_policy(set, cfg, Variant::Bco, &PlainL1)
}

impl<T: Scalar> PolicyModel<T> {
    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn regressor(&self) -> &Regressor<T> {
        &self.net
    }

    pub fn best_val_loss(&self) -> f64 {
        self.best_val_loss
    }

    /// Raw network output, before clipping.
    pub fn predict(&self, state: &State<T>) -> Result<Action<T>> {
        let y = self.net.predict(&state.features())?;
        Ok(Action::new(y[0], y[1], y[2]))
    }

    pub fn to_checkpoint(&self) -> Checkpoint<T> {
        let mut meta = BTreeMap::new();
        meta.insert("variant".to_string(), serde_json::to_value(self.variant).unwrap());
        self.net.to_checkpoint(self.best_val_loss, meta)
    }

    pub fn from_checkpoint(ck: &Checkpoint<T>) -> Result<Self> {
        let v = ck
            .meta
            .get("variant")
            .cloned()
            .ok_or_else(|| Error::InvalidSpec("checkpoint meta lacks `variant`".into()))?;
        let net = Regressor::from_checkpoint(ck)?;
        if net.net().spec().input_dim() != STATE_DIM || net.net().spec().output_dim() != ACTION_DIM {
            return Err(Error::InvalidSpec("not a policy network".into()));
        }
        Ok(Self {
            variant: serde_json::from_value(v)?,
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

/// Anything that maps a state to a velocity command.
pub trait Controller<T: Scalar> {
    fn act(&self, state: &State<T>) -> Result<Action<T>>;
}

impl<T: Scalar> Controller<T> for PolicyModel<T> {
    fn act(&self, state: &State<T>) -> Result<Action<T>> {
        Ok(self.predict(state)?.clipped())
    }
}

/// Always commands zero velocity.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroPolicy;

impl<T: Scalar> Controller<T> for ZeroPolicy {
    fn act(&self, _state: &State<T>) -> Result<Action<T>> {
        Ok(Action::zero())
    }
}

/// Hand-written insertion controller: moves to a point above the slot,
/// aligns, then descends, braking in time to stop on each target.
#[derive(Clone, Copy, Debug)]
pub struct ScriptedInsertion<T> {
    pub limits: RobotLimits<T>,
    pub dt: T,
    /// Height of the approach point above the slot.
    pub hover_height: T,
}

impl<T: Scalar> Controller<T> for ScriptedInsertion<T> {
    fn act(&self, state: &State<T>) -> Result<Action<T>> {
        let slot = state.obs.slot_pose;
        let p = state.pose;
        let half = T::of(0.5);
        let aligned = (p.x - slot.x).abs() <= half * state.obs.slot_half_width
            && (p.theta - slot.theta).abs() <= T::of(0.01)
            && p.y >= slot.y;
        let target = if aligned {
            slot
        } else {
            Pose::new(slot.x, slot.y + self.hover_height, slot.theta)
        };
        Ok(track_braking(p, target, &self.limits, self.dt))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout<T: Scalar> {
    pub trajectory: Trajectory<T>,
    pub success: bool,
}

/// Runs `controller` in closed loop from `initial` for at most `max_steps`
/// states, stopping at the first successful state.
pub fn rollout<T: Scalar, C: Controller<T> + ?Sized>(
    controller: &C,
    id: impl Into<String>,
    initial: State<T>,
    limits: &RobotLimits<T>,
    dt: T,
    max_steps: usize,
    criteria: &SuccessCriteria,
) -> Result<Rollout<T>> {
    if max_steps == 0 {
        return Err(Error::InvalidConfig("max_steps must be >= 1".into()));
    }
    let mut episode = Episode::new(initial.pose, *limits, dt)?;
    let mut monitor = InsertionMonitor::new(initial.obs, *criteria);
    let mut poses = vec![episode.pose()];
    let mut actions = Vec::new();
    let mut success = monitor.observe(&episode.pose());
    while !success && poses.len() < max_steps {
        let state = State::new(episode.pose(), initial.obs);
        let cmd = controller.act(&state)?;
        actions.push(episode.apply(cmd));
        poses.push(episode.pose());
        success = monitor.observe(&episode.pose());
    }
    let trajectory = Trajectory::new(
        id,
        TrajectorySource::PolicyRollout,
        dt,
        initial.obs,
        poses,
        Some(actions),
    )?;
    Ok(Rollout { trajectory, success })
}
