//! Simulated planar robot, tracking controller and insertion task.

mod dynamics;
mod task;
mod tracking;
mod types;

pub use dynamics::{step, Episode};
pub use task::{first_success, task_success, InsertionMonitor, SuccessCriteria, TaskSetup};
pub use tracking::{braking_speed, generate_random_trajectory, track, track_braking, RandomTrajectoryConfig};
pub use types::{
    Action, EnvObservation, Pose, RobotLimits, State, ACTION_DIM, POSE_DIM, STATE_DIM,
};
