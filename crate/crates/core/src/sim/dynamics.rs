//! Ground-truth robot dynamics: a velocity- and acceleration-limited integrator.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::types::{Action, Pose, RobotLimits};

/// Advances `pose` by one step of the clipped velocity command.
///
/// Out-of-range commands are clipped to `[-1, 1]` and the result is clamped
/// to the workspace. `dt` must be positive.
pub fn step<T: Scalar>(pose: Pose<T>, action: Action<T>, limits: &RobotLimits<T>, dt: T) -> Pose<T> {
    debug_assert!(dt > T::zero(), "dt must be positive");
    let a = action.clipped().to_array();
    let p = pose.to_array();
    let next: [T; 3] = std::array::from_fn(|i| p[i] + a[i] * limits.max_speed[i] * dt);
    Pose::from_array(next).clamp_workspace()
}

/// Stateful episode runner carrying the previously executed command so that
/// acceleration limits can be enforced.
#[derive(Clone, Debug)]
pub struct Episode<T> {
    limits: RobotLimits<T>,
    dt: T,
    pose: Pose<T>,
    last: Action<T>,
}

impl<T: Scalar> Episode<T> {
    /// Starts at rest at `start`.
    pub fn new(start: Pose<T>, limits: RobotLimits<T>, dt: T) -> Result<Self> {
        limits.validate()?;
        if !(dt > T::zero()) {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {dt}")));
        }
        Ok(Self {
            limits,
            dt,
            pose: start.clamp_workspace(),
            last: Action::zero(),
        })
    }

    pub fn pose(&self) -> Pose<T> {
        self.pose
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn limits(&self) -> &RobotLimits<T> {
        &self.limits
    }

    /// Applies `command` and returns the action actually executed after
    /// velocity and acceleration clipping.
    pub fn apply(&mut self, command: Action<T>) -> Action<T> {
        let cmd = command.clipped().to_array();
        let prev = self.last.to_array();
        let executed: [T; 3] = std::array::from_fn(|i| {
            let max_change = self.limits.max_accel[i] * self.dt / self.limits.max_speed[i];
            cmd[i].max(prev[i] - max_change).min(prev[i] + max_change)
        });
        let executed = Action::from_array(executed);
        self.pose = step(self.pose, executed, &self.limits, self.dt);
        self.last = executed;
        executed
    }
}
