use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Planar end-effector pose. Every component is normalized to `[0, 1]`;
/// `theta` maps linearly onto the configured orientation range.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose<T> {
    pub x: T,
    pub y: T,
    pub theta: T,
}

impl<T: Scalar> Pose<T> {
    pub fn new(x: T, y: T, theta: T) -> Self {
        Self { x, y, theta }
    }

    pub fn from_array([x, y, theta]: [T; 3]) -> Self {
        Self { x, y, theta }
    }

    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.theta]
    }

    /// Clamps each component into the unit workspace.
    pub fn clamp_workspace(self) -> Self {
        let c = |v: T| v.max(T::zero()).min(T::one());
        Self::new(c(self.x), c(self.y), c(self.theta))
    }

    pub fn in_workspace(&self) -> bool {
        self.to_array()
            .iter()
            .all(|v| *v >= T::zero() && *v <= T::one())
    }

    /// `other - self`, per component.
    pub fn delta_to(&self, other: &Pose<T>) -> [T; 3] {
        [other.x - self.x, other.y - self.y, other.theta - self.theta]
    }

    /// Sum of absolute per-component differences.
    pub fn l1_distance(&self, other: &Pose<T>) -> T {
        self.delta_to(other).iter().map(|d| d.abs()).sum()
    }

    pub fn xy_distance(&self, other: &Pose<T>) -> T {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Commanded velocity as a fraction of each component's maximum speed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[T; 3]", into = "[T; 3]")]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct Action<T> {
    pub vx: T,
    pub vy: T,
    pub vtheta: T,
}

impl<T: Scalar> Action<T> {
    pub fn new(vx: T, vy: T, vtheta: T) -> Self {
        Self { vx, vy, vtheta }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn from_array([vx, vy, vtheta]: [T; 3]) -> Self {
        Self { vx, vy, vtheta }
    }

    pub fn to_array(self) -> [T; 3] {
        [self.vx, self.vy, self.vtheta]
    }

    /// Clips each component into `[-1, 1]`. NaN components become zero.
    pub fn clipped(self) -> Self {
        let c = |v: T| {
            if v.is_nan() {
                T::zero()
            } else {
                v.max(-T::one()).min(T::one())
            }
        };
        Self::new(c(self.vx), c(self.vy), c(self.vtheta))
    }

    pub fn max_abs(&self) -> T {
        self.to_array()
            .iter()
            .fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

impl<T: Scalar> From<[T; 3]> for Action<T> {
    fn from(a: [T; 3]) -> Self {
        Self::from_array(a)
    }
}

impl<T: Scalar> From<Action<T>> for [T; 3] {
    fn from(a: Action<T>) -> Self {
        a.to_array()
    }
}

/// The insertion slot, fixed for one episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvObservation<T> {
    pub slot_pose: Pose<T>,
    pub slot_half_width: T,
}

impl<T: Scalar> EnvObservation<T> {
    /// The slot must sit inside the workspace with a margin of at least its half width.
    pub fn new(slot_pose: Pose<T>, slot_half_width: T) -> Result<Self> {
        let obs = Self {
            slot_pose,
            slot_half_width,
        };
        obs.validate()?;
        Ok(obs)
    }

    pub fn validate(&self) -> Result<()> {
        let hw = self.slot_half_width;
        if !(hw > T::zero()) {
            return Err(Error::InvalidConfig(format!(
                "slot half width must be positive, got {hw}"
            )));
        }
        let p = self.slot_pose;
        let inside = |v: T| v >= hw && v <= T::one() - hw;
        if !(inside(p.x) && inside(p.y) && p.theta >= T::zero() && p.theta <= T::one()) {
            return Err(Error::InvalidConfig(format!(
                "slot ({}, {}, {}) not inside workspace with margin {hw}",
                p.x, p.y, p.theta
            )));
        }
        Ok(())
    }
}

impl<T: Scalar> Default for EnvObservation<T> {
    fn default() -> Self {
        Self {
            slot_pose: Pose::new(T::of(0.5), T::of(0.5), T::of(0.5)),
            slot_half_width: T::of(0.05),
        }
    }
}

/// Number of features in a flattened [`State`].
pub const STATE_DIM: usize = 7;
pub const POSE_DIM: usize = 3;
pub const ACTION_DIM: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct State<T> {
    pub pose: Pose<T>,
    pub obs: EnvObservation<T>,
}

impl<T: Scalar> State<T> {
    pub fn new(pose: Pose<T>, obs: EnvObservation<T>) -> Self {
        Self { pose, obs }
    }

    /// `[x, y, theta, slot_x, slot_y, slot_theta, slot_half_width]`
    pub fn features(&self) -> [T; STATE_DIM] {
        let s = self.obs.slot_pose;
        [
            self.pose.x,
            self.pose.y,
            self.pose.theta,
            s.x,
            s.y,
            s.theta,
            self.obs.slot_half_width,
        ]
    }
}

/// Velocity and acceleration limits of the simulated robot, per component,
/// in normalized units per second (per second squared).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotLimits<T> {
    pub max_speed: [T; 3],
    pub max_accel: [T; 3],
}

impl<T: Scalar> RobotLimits<T> {
    pub fn new(max_speed: [T; 3], max_accel: [T; 3]) -> Result<Self> {
        let limits = Self {
            max_speed,
            max_accel,
        };
        limits.validate()?;
        Ok(limits)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: &T| *v > T::zero() && v.is_finite();
        if self.max_speed.iter().all(ok) && self.max_accel.iter().all(ok) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(
                "robot limits must be strictly positive and finite".into(),
            ))
        }
    }

    /// Largest per-component displacement in one step of length `dt`.
    pub fn step_bound(&self, dt: T) -> [T; 3] {
        self.max_speed.map(|v| v * dt)
    }
}

impl<T: Scalar> Default for RobotLimits<T> {
    fn default() -> Self {
        Self {
            max_speed: [T::of(0.5), T::of(0.5), T::of(0.5)],
            max_accel: [T::of(2.0), T::of(2.0), T::of(2.0)],
        }
    }
}
