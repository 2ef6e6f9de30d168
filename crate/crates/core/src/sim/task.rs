//! Insertion task: slot placement, start-state randomization and the success predicate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::trajectory::Trajectory;

use super::types::{EnvObservation, Pose, State};

/// Tolerances for a successful insertion.
///
/// The approach corridor is the vertical band `|x - slot.x| <= slot_half_width`.
/// The entry line is `y = slot.y + entry_depth`; an insertion counts only if
/// the pose crossed that line from above inside the corridor and stayed in
/// the corridor until it reached the slot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessCriteria {
    pub tol_pos: f64,
    pub tol_theta: f64,
    pub entry_depth: f64,
}

impl Default for SuccessCriteria {
    fn default() -> Self {
        Self {
            tol_pos: 0.02,
            tol_theta: 0.03,
            entry_depth: 0.06,
        }
    }
}

impl SuccessCriteria {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_pos > 0.0 && self.tol_theta > 0.0) {
            return Err(Error::InvalidConfig("success tolerances must be positive".into()));
        }
        if !(self.entry_depth > self.tol_pos) {
            return Err(Error::InvalidConfig(
                "entry_depth must exceed tol_pos so the entry line lies outside the goal region".into(),
            ));
        }
        Ok(())
    }
}

/// Incremental success check over a pose stream.
#[derive(Clone, Debug)]
pub struct InsertionMonitor<T> {
    obs: EnvObservation<T>,
    criteria: SuccessCriteria,
    armed: bool,
    succeeded: bool,
}

impl<T: Scalar> InsertionMonitor<T> {
    pub fn new(obs: EnvObservation<T>, criteria: SuccessCriteria) -> Self {
        Self {
            obs,
            criteria,
            armed: false,
            succeeded: false,
        }
    }

    /// Feeds the next pose; returns whether the task has succeeded so far.
    pub fn observe(&mut self, pose: &Pose<T>) -> bool {
        if self.succeeded {
            return true;
        }
        let slot = self.obs.slot_pose;
        let in_corridor = (pose.x - slot.x).abs() <= self.obs.slot_half_width;
        if !in_corridor {
            self.armed = false;
        } else if pose.y >= slot.y + T::of(self.criteria.entry_depth) {
            self.armed = true;
        }
        let at_goal = pose.xy_distance(&slot) <= T::of(self.criteria.tol_pos)
            && (pose.theta - slot.theta).abs() <= T::of(self.criteria.tol_theta);
        self.succeeded = self.armed && at_goal;
        self.succeeded
    }

    pub fn succeeded(&self) -> bool {
        self.succeeded
    }
}

/// Index of the first state at which the insertion succeeds.
pub fn first_success<T: Scalar>(traj: &Trajectory<T>, criteria: &SuccessCriteria) -> Option<usize> {
    let mut monitor = InsertionMonitor::new(*traj.obs(), *criteria);
    traj.poses().iter().position(|p| monitor.observe(p))
}

/// Comparisons against the tolerances are inclusive.
pub fn task_success<T: Scalar>(traj: &Trajectory<T>, criteria: &SuccessCriteria) -> bool {
    first_success(traj, criteria).is_some()
}

/// Slot placement and the region initial poses are drawn from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSetup {
    /// Nominal slot pose `[x, y, theta]`.
    pub slot: [f64; 3],
    pub slot_half_width: f64,
    /// Uniform jitter applied to the slot's x and y per episode.
    pub slot_jitter: f64,
    pub start_x: [f64; 2],
    pub start_y: [f64; 2],
    /// Half-range of the start orientation around the slot orientation.
    pub start_theta_spread: f64,
    pub criteria: SuccessCriteria,
}

impl Default for TaskSetup {
    fn default() -> Self {
        Self {
            slot: [0.7, 0.25, 0.5],
            slot_half_width: 0.03,
            slot_jitter: 0.05,
            start_x: [0.1, 0.4],
            start_y: [0.6, 0.9],
            start_theta_spread: 0.15,
            criteria: SuccessCriteria::default(),
        }
    }
}

impl TaskSetup {
    pub fn validate(&self) -> Result<()> {
        self.criteria.validate()?;
        let nominal = self.nominal_obs::<f64>()?;
        let j = self.slot_jitter;
        for corner in [[-j, -j], [j, j]] {
            let p = Pose::new(self.slot[0] + corner[0], self.slot[1] + corner[1], self.slot[2]);
            EnvObservation::new(p, self.slot_half_width)?;
        }
        let range_ok = |r: [f64; 2]| r[0] <= r[1] && r[0] >= 0.0 && r[1] <= 1.0;
        if !range_ok(self.start_x) || !range_ok(self.start_y) {
            return Err(Error::InvalidConfig("start region must lie inside the workspace".into()));
        }
        let th = nominal.slot_pose.theta;
        if th - self.start_theta_spread < 0.0 || th + self.start_theta_spread > 1.0 {
            return Err(Error::InvalidConfig("start orientation range leaves the workspace".into()));
        }
        Ok(())
    }

    pub fn nominal_obs<T: Scalar>(&self) -> Result<EnvObservation<T>> {
        EnvObservation::new(
            Pose::new(T::of(self.slot[0]), T::of(self.slot[1]), T::of(self.slot[2])),
            T::of(self.slot_half_width),
        )
    }

    /// Draws a slot placement and an initial pose from the start region.
    pub fn sample_initial<T: Scalar, R: Rng>(&self, rng: &mut R) -> State<T> {
        let mut u = |lo: f64, hi: f64| if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let j = self.slot_jitter;
        let slot = Pose::new(
            T::of(self.slot[0] + u(-j, j)),
            T::of(self.slot[1] + u(-j, j)),
            T::of(self.slot[2]),
        );
        let s = self.start_theta_spread;
        let pose = Pose::new(
            T::of(u(self.start_x[0], self.start_x[1])),
            T::of(u(self.start_y[0], self.start_y[1])),
            T::of(self.slot[2] + u(-s, s)),
        );
        State::new(
            pose,
            EnvObservation {
                slot_pose: slot,
                slot_half_width: T::of(self.slot_half_width),
            },
        )
    }
}
