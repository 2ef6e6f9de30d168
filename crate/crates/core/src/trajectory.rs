//! Trajectories and their JSON Lines representation.
//!
//! One trajectory per line:
//!
//! ```text
//! {"id":..,"source":..,"dt":..,
//!  "states":[{"x":..,"y":..,"theta":..,"slot":{"x":..,"y":..,"theta":..,"half_width":..}}, ..],
//!  "actions":[[vx,vy,vtheta], ..]}
//! ```
//!
//! `actions` is omitted for observation-only trajectories.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sim::{Action, EnvObservation, Pose, State};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectorySource {
    RobotRandom,
    HumanDemo,
    SyntheticDemo,
    PolicyRollout,
}

impl fmt::Display for TrajectorySource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::RobotRandom => "robot_random",
            Self::HumanDemo => "human_demo",
            Self::SyntheticDemo => "synthetic_demo",
            Self::PolicyRollout => "policy_rollout",
        })
    }
}

/// A time-ordered pose sequence against one static slot observation.
///
/// The observation is stored once, so every state of a trajectory shares it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TrajectoryWire<T>", into = "TrajectoryWire<T>")]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct Trajectory<T: Scalar> {
    id: String,
    source: TrajectorySource,
    dt: T,
    obs: EnvObservation<T>,
    poses: Vec<Pose<T>>,
    actions: Option<Vec<Action<T>>>,
}

impl<T: Scalar> Trajectory<T> {
    /// Validates that there is at least one pose, that `dt` is positive and
    /// that `actions`, when present, has exactly one entry per transition.
    pub fn new(
        id: impl Into<String>,
        source: TrajectorySource,
        dt: T,
        obs: EnvObservation<T>,
        poses: Vec<Pose<T>>,
        actions: Option<Vec<Action<T>>>,
    ) -> Result<Self> {
        let id = id.into();
        let invalid = |reason: String| Error::InvalidTrajectory {
            id: id.clone(),
            reason,
        };
        if poses.is_empty() {
            return Err(invalid("no states".into()));
        }
        if !(dt > T::zero()) {
            return Err(invalid(format!("dt must be positive, got {dt}")));
        }
        if let Some(a) = &actions {
            if a.len() + 1 != poses.len() {
                return Err(invalid(format!(
                    "{} actions for {} states",
                    a.len(),
                    poses.len()
                )));
            }
        }
        if poses.iter().any(|p| !p.is_finite()) {
            return Err(invalid("non-finite pose".into()));
        }
        Ok(Self {
            id,
            source,
            dt,
            obs,
            poses,
            actions,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn source(&self) -> TrajectorySource {
        self.source
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn obs(&self) -> &EnvObservation<T> {
        &self.obs
    }

    pub fn poses(&self) -> &[Pose<T>] {
        &self.poses
    }

    pub fn actions(&self) -> Option<&[Action<T>]> {
        self.actions.as_deref()
    }

    /// Number of states.
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn state(&self, i: usize) -> State<T> {
        State::new(self.poses[i], self.obs)
    }

    pub fn states(&self) -> impl Iterator<Item = State<T>> + '_ {
        self.poses.iter().map(|p| State::new(*p, self.obs))
    }

    /// Drops the actions, keeping only observations.
    pub fn without_actions(mut self) -> Self {
        self.actions = None;
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    /// Fails with [`Error::TooShort`] unless there are at least `min` states.
    pub fn require_len(&self, min: usize) -> Result<()> {
        if self.len() < min {
            return Err(Error::TooShort {
                id: self.id.clone(),
                len: self.len(),
                min,
            });
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct SlotWire<T> {
    x: T,
    y: T,
    theta: T,
    half_width: T,
}

#[derive(Serialize, Deserialize)]
struct StateWire<T> {
    x: T,
    y: T,
    theta: T,
    slot: SlotWire<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
struct TrajectoryWire<T> {
    id: String,
    source: TrajectorySource,
    dt: T,
    states: Vec<StateWire<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    actions: Option<Vec<Action<T>>>,
}

impl<T: Scalar> From<Trajectory<T>> for TrajectoryWire<T> {
    fn from(t: Trajectory<T>) -> Self {
        let o = t.obs;
        let states = t
            .poses
            .iter()
            .map(|p| StateWire {
                x: p.x,
                y: p.y,
                theta: p.theta,
                slot: SlotWire {
                    x: o.slot_pose.x,
                    y: o.slot_pose.y,
                    theta: o.slot_pose.theta,
                    half_width: o.slot_half_width,
                },
            })
            .collect();
        TrajectoryWire {
            id: t.id,
            source: t.source,
            dt: t.dt,
            states,
            actions: t.actions,
        }
    }
}

impl<T: Scalar> TryFrom<TrajectoryWire<T>> for Trajectory<T> {
    type Error = Error;

    fn try_from(w: TrajectoryWire<T>) -> Result<Self> {
        let first = w.states.first().ok_or_else(|| Error::InvalidTrajectory {
            id: w.id.clone(),
            reason: "no states".into(),
        })?;
        let slot = |s: &SlotWire<T>| EnvObservation {
            slot_pose: Pose::new(s.x, s.y, s.theta),
            slot_half_width: s.half_width,
        };
        let obs = slot(&first.slot);
        if w.states.iter().any(|s| slot(&s.slot) != obs) {
            return Err(Error::InvalidTrajectory {
                id: w.id,
                reason: "slot observation changes within trajectory".into(),
            });
        }
        let poses = w
            .states
            .iter()
            .map(|s| Pose::new(s.x, s.y, s.theta))
            .collect();
        Trajectory::new(w.id, w.source, w.dt, obs, poses, w.actions)
    }
}

/// Writes one trajectory per line.
pub fn write_jsonl<T: Scalar, W: Write>(mut w: W, trajs: &[Trajectory<T>]) -> Result<()> {
    for t in trajs {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n").map_err(|e| Error::io("<writer>", e))?;
    }
    w.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}

/// Reads trajectories from JSON Lines, skipping blank lines.
pub fn read_jsonl<T: Scalar, R: BufRead>(r: R) -> Result<Vec<Trajectory<T>>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let t = serde_json::from_str(&line).map_err(|e| Error::InvalidTrajectory {
            id: format!("<line {}>", n + 1),
            reason: e.to_string(),
        })?;
        out.push(t);
    }
    Ok(out)
}

pub fn save_jsonl<T: Scalar>(path: &Path, trajs: &[Trajectory<T>]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_jsonl(BufWriter::new(f), trajs)
}

pub fn load_jsonl<T: Scalar>(path: &Path) -> Result<Vec<Trajectory<T>>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl(BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn obs() -> EnvObservation<f64> {
        EnvObservation::new(Pose::new(0.7, 0.25, 0.5), 0.04).unwrap()
    }

    #[test]
    fn wire_format_field_names() {
        let t = Trajectory::new(
            "t0",
            TrajectorySource::RobotRandom,
            0.1,
            obs(),
            vec![Pose::new(0.1, 0.2, 0.3), Pose::new(0.2, 0.2, 0.3)],
            Some(vec![Action::new(1.0, 0.0, 0.0)]),
        )
        .unwrap();
        let v: serde_json::Value = serde_json::to_value(&t).unwrap();
        assert_eq!(v["source"], "robot_random");
        assert_eq!(v["states"][0]["slot"]["half_width"], 0.04);
        assert_eq!(v["states"][1]["x"], 0.2);
        assert_eq!(v["actions"][0], serde_json::json!([1.0, 0.0, 0.0]));
    }

    #[test]
    fn observation_only_omits_actions() {
        let t = Trajectory::new(
            "d",
            TrajectorySource::SyntheticDemo,
            0.1,
            obs(),
            vec![Pose::new(0.1, 0.2, 0.3), Pose::new(0.2, 0.2, 0.3)],
            None,
        )
        .unwrap();
        let s = serde_json::to_string(&t).unwrap();
        assert!(!s.contains("actions"));
    }

    #[test]
    fn action_count_must_match() {
        let r = Trajectory::new(
            "bad",
            TrajectorySource::RobotRandom,
            0.1,
            obs(),
            vec![Pose::new(0.1, 0.2, 0.3), Pose::new(0.2, 0.2, 0.3)],
            Some(vec![]),
        );
        assert!(matches!(r, Err(Error::InvalidTrajectory { .. })));
    }

    #[test]
    fn rejects_changing_slot() {
        let line = r#"{"id":"x","source":"human_demo","dt":0.1,"states":[
            {"x":0.1,"y":0.1,"theta":0.5,"slot":{"x":0.5,"y":0.5,"theta":0.5,"half_width":0.05}},
            {"x":0.1,"y":0.1,"theta":0.5,"slot":{"x":0.6,"y":0.5,"theta":0.5,"half_width":0.05}}]}"#;
        let r: std::result::Result<Trajectory<f64>, _> = serde_json::from_str(line);
        assert!(r.is_err());
    }

    proptest! {
        #[test]
        fn jsonl_round_trip(
            poses in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 1..20),
            with_actions in any::<bool>(),
        ) {
            let poses: Vec<_> = poses.into_iter().map(|(x, y, t)| Pose::new(x, y, t)).collect();
            let actions = with_actions.then(|| {
                (1..poses.len()).map(|i| Action::new(0.1 * i as f64, -0.5, 1.0)).collect()
            });
            let t = Trajectory::new("p", TrajectorySource::PolicyRollout, 0.1, obs(), poses, actions).unwrap();
            let mut buf = Vec::new();
            write_jsonl(&mut buf, std::slice::from_ref(&t)).unwrap();
            let back: Vec<Trajectory<f64>> = read_jsonl(buf.as_slice()).unwrap();
            prop_assert_eq!(back, vec![t]);
        }
    }
}
