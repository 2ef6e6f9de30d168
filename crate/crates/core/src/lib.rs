//! Feasibility-aware behavior cloning from observation on a simulated,
//! velocity-limited planar robot.

pub mod demonstrators;
pub mod dynamics;
pub mod error;
pub mod feasibility;
pub mod nn;
pub mod pipeline;
pub mod policy;
pub mod scalar;
pub mod seed;
pub mod sim;
pub mod stats;
pub mod trajectory;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Pose = sim::Pose<f64>;
pub type Pose32 = sim::Pose<f32>;
pub type Action = sim::Action<f64>;
pub type Action32 = sim::Action<f32>;
pub type State = sim::State<f64>;
pub type State32 = sim::State<f32>;
pub type EnvObservation = sim::EnvObservation<f64>;
pub type EnvObservation32 = sim::EnvObservation<f32>;
pub type RobotLimits = sim::RobotLimits<f64>;
pub type RobotLimits32 = sim::RobotLimits<f32>;
pub type Trajectory = trajectory::Trajectory<f64>;
pub type Trajectory32 = trajectory::Trajectory<f32>;
pub type Mlp = nn::Mlp<f64>;
pub type Mlp32 = nn::Mlp<f32>;
pub type DynModel = dynamics::DynModel<f64>;
pub type DynModel32 = dynamics::DynModel<f32>;
pub type PolicyModel = policy::PolicyModel<f64>;
pub type PolicyModel32 = policy::PolicyModel<f32>;
