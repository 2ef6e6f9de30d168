//! Demonstration sources: a synthetic demonstrator that adapts to feedback,
//! and resampling of hand-drawn polylines.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::DynModel;
use crate::error::{Error, Result};
use crate::feasibility::{feasibility_profile, FeasibilityProfile};
use crate::seed::derive_seed;
use crate::sim::{braking_speed, EnvObservation, Pose, RobotLimits, TaskSetup};
use crate::trajectory::{load_jsonl, save_jsonl, Trajectory, TrajectorySource};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthDemoConfig {
    /// Demonstration speed as a multiple of the robot's maximum speed.
    pub speed_multiplier: f64,
    /// Standard deviation of the noise added to interior poses.
    pub jitter_std: f64,
    pub adaptation_rate: f64,
    pub feedback_enabled: bool,
    pub seed: u64,
    /// Height above the slot of the approach point.
    pub hover_height: f64,
    /// Upper bound on the number of states of one demonstration.
    pub max_steps: usize,
    /// Extra states held at the slot after arriving.
    pub dwell_steps: usize,
}

impl Default for SynthDemoConfig {
    fn default() -> Self {
        Self {
            speed_multiplier: 3.0,
            jitter_std: 0.002,
            adaptation_rate: 0.5,
            feedback_enabled: true,
            seed: 0,
            hover_height: 0.15,
            max_steps: 100,
            dwell_steps: 3,
        }
    }
}

impl SynthDemoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.speed_multiplier >= 0.0 && self.speed_multiplier.is_finite()) {
            return Err(Error::InvalidConfig("speed_multiplier must be >= 0".into()));
        }
        if !(self.jitter_std >= 0.0 && self.jitter_std.is_finite()) {
            return Err(Error::InvalidConfig("jitter_std must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.adaptation_rate) {
            return Err(Error::InvalidConfig("adaptation_rate must lie in [0, 1]".into()));
        }
        if self.max_steps < 2 {
            return Err(Error::InvalidConfig("max_steps must be >= 2".into()));
        }
        if !(self.hover_height > 0.0) {
            return Err(Error::InvalidConfig("hover_height must be positive".into()));
        }
        Ok(())
    }
}

/// Demonstrates an insertion from `start`: a straight move to the point
/// `hover_height` above the slot, then straight down into it.
///
/// Each segment follows a trapezoidal speed profile that starts and ends at
/// rest. Progress is measured in multiples of the robot's per-step bound
/// along the most constrained component. With `speed_multiplier` s the
/// profile is the robot's own profile played s times faster: cruise speed s
/// and acceleration s² times the robot's limits. Interior poses receive
/// Gaussian jitter; the first and last poses are exact, and the
/// demonstrator then holds still at the slot for `dwell_steps` states. No
/// actions are recorded.
pub fn synth_demo(
    cfg: &SynthDemoConfig,
    id: impl Into<String>,
    start: Pose<f64>,
    obs: EnvObservation<f64>,
    limits: &RobotLimits<f64>,
    dt: f64,
) -> Result<Trajectory<f64>> {
    cfg.validate()?;
    limits.validate()?;
    let slot = obs.slot_pose;
    let hover = Pose::new(slot.x, (slot.y + cfg.hover_height).min(1.0), slot.theta);
    let bound = limits.step_bound(dt);
    let s = cfg.speed_multiplier;
    let cruise = s;
    let accel = s * s * (0..3).map(|i| limits.max_accel[i] * dt / limits.max_speed[i]).fold(f64::INFINITY, f64::min);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.jitter_std.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let mut poses = vec![start];
    let mut arrived = false;
    let mut from = start;
    'segments: for wp in [hover, slot] {
        let d = from.delta_to(&wp);
        let length = (0..3).map(|i| d[i].abs() / bound[i]).fold(0.0, f64::max);
        let (mut progress, mut speed) = (0.0, 0.0);
        while progress < length {
            if poses.len() >= cfg.max_steps {
                break 'segments;
            }
            let remaining = length - progress;
            speed = (speed + accel).min(cruise).min(braking_speed(remaining, accel));
            if speed <= 0.0 {
                // cannot move at all
                poses.resize(cfg.max_steps, from);
                break 'segments;
            }
            let landed = speed >= remaining - 1e-12;
            progress = if landed { length } else { progress + speed };
            let f = progress / length;
            let nominal = if landed {
                wp
            } else {
                let a = from.to_array();
                Pose::from_array(std::array::from_fn(|i| a[i] + d[i] * f))
            };
            let exact = cfg.jitter_std == 0.0 || (landed && wp == slot);
            poses.push(if exact {
                nominal
            } else {
                let p = nominal.to_array();
                Pose::from_array(std::array::from_fn(|i| p[i] + noise.sample(&mut rng))).clamp_workspace()
            });
        }
        from = wp;
        arrived = wp == slot;
    }
    if arrived {
        let end = poses.len().saturating_add(cfg.dwell_steps).min(cfg.max_steps);
        poses.resize(end, slot);
    }
    if poses.len() < 2 {
        // already at the slot
        poses.push(*poses.last().expect("non-empty"));
    }
    Trajectory::new(id, TrajectorySource::SyntheticDemo, dt, obs, poses, None)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionEntry {
    pub trajectory: Trajectory<f64>,
    /// Feedback shown to the demonstrator; absent without feedback.
    pub profile: Option<FeasibilityProfile>,
    /// Speed the demonstration was performed at, for synthetic sessions.
    pub speed_multiplier: Option<f64>,
}

/// An ordered sequence of demonstrations by one demonstrator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoSession {
    pub demonstrator: String,
    pub feedback_enabled: bool,
    pub entries: Vec<SessionEntry>,
}

#[derive(Serialize, Deserialize)]
struct SessionManifest {
    demonstrator: String,
    feedback_enabled: bool,
    n_demos: usize,
    trajectory_ids: Vec<String>,
    speed_multipliers: Vec<Option<f64>>,
}

const TRAJECTORIES_FILE: &str = "trajectories.jsonl";
const PROFILES_FILE: &str = "profiles.json";
const MANIFEST_FILE: &str = "session.json";

impl DemoSession {
    pub fn new(demonstrator: impl Into<String>, feedback_enabled: bool) -> Self {
        Self {
            demonstrator: demonstrator.into(),
            feedback_enabled,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn trajectories(&self) -> Vec<Trajectory<f64>> {
        self.entries.iter().map(|e| e.trajectory.clone()).collect()
    }

    /// Appends a demonstration, attaching its profile only when the session
    /// shows feedback.
    pub fn push(&mut self, trajectory: Trajectory<f64>, profile: FeasibilityProfile, speed: Option<f64>) {
        self.entries.push(SessionEntry {
            trajectory,
            profile: self.feedback_enabled.then_some(profile),
            speed_multiplier: speed,
        });
    }

    /// Feasibility profile of every demonstration, reusing stored ones.
    pub fn profiles(&self, idm: &DynModel<f64>, fdm: &DynModel<f64>, sigma_w: f64) -> Result<Vec<FeasibilityProfile>> {
        self.entries
            .iter()
            .map(|e| match &e.profile {
                Some(p) if p.sigma_w == sigma_w => Ok(p.clone()),
                _ => feasibility_profile(fdm, idm, &e.trajectory, sigma_w),
            })
            .collect()
    }

    /// Per-demonstration mean feasibility, in session order.
    pub fn feasibility_series(&self, idm: &DynModel<f64>, fdm: &DynModel<f64>, sigma_w: f64) -> Result<Vec<f64>> {
        Ok(self.profiles(idm, fdm, sigma_w)?.iter().map(|p| p.mean).collect())
    }

    /// Writes `trajectories.jsonl`, `profiles.json` and `session.json` into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_jsonl(&dir.join(TRAJECTORIES_FILE), &self.trajectories())?;
        let profiles: Vec<&Option<FeasibilityProfile>> = self.entries.iter().map(|e| &e.profile).collect();
        let p = dir.join(PROFILES_FILE);
        fs::write(&p, serde_json::to_string_pretty(&profiles)?).map_err(|e| Error::io(&p, e))?;
        let manifest = SessionManifest {
            demonstrator: self.demonstrator.clone(),
            feedback_enabled: self.feedback_enabled,
            n_demos: self.len(),
            trajectory_ids: self.entries.iter().map(|e| e.trajectory.id().to_string()).collect(),
            speed_multipliers: self.entries.iter().map(|e| e.speed_multiplier).collect(),
        };
        let m = dir.join(MANIFEST_FILE);
        fs::write(&m, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&m, e))
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let m = dir.join(MANIFEST_FILE);
        let manifest: SessionManifest =
            serde_json::from_str(&fs::read_to_string(&m).map_err(|e| Error::io(&m, e))?)?;
        let trajs = load_jsonl::<f64>(&dir.join(TRAJECTORIES_FILE))?;
        let p = dir.join(PROFILES_FILE);
        let profiles: Vec<Option<FeasibilityProfile>> = if p.exists() {
            serde_json::from_str(&fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)?
        } else {
            vec![None; trajs.len()]
        };
        if trajs.len() != manifest.n_demos || profiles.len() != trajs.len() {
            return Err(Error::InvalidDemo(format!(
                "session in {} lists {} demos but has {} trajectories and {} profiles",
                dir.display(),
                manifest.n_demos,
                trajs.len(),
                profiles.len()
            )));
        }
        let speeds = if manifest.speed_multipliers.len() == trajs.len() {
            manifest.speed_multipliers
        } else {
            vec![None; trajs.len()]
        };
        Ok(Self {
            demonstrator: manifest.demonstrator,
            feedback_enabled: manifest.feedback_enabled,
            entries: trajs
                .into_iter()
                .zip(profiles)
                .zip(speeds)
                .map(|((trajectory, profile), speed_multiplier)| SessionEntry {
                    trajectory,
                    profile,
                    speed_multiplier,
                })
                .collect(),
        })
    }
}

/// Shared environment of a demonstration session.
#[derive(Clone, Copy, Debug)]
pub struct SessionEnv<'a> {
    pub setup: &'a TaskSetup,
    pub limits: &'a RobotLimits<f64>,
    pub dt: f64,
    pub idm: &'a DynModel<f64>,
    pub fdm: &'a DynModel<f64>,
    pub sigma_w: f64,
}

/// Records `n_demos` synthetic demonstrations from randomized starts.
///
/// With feedback, after each demonstration the demonstrator slows down
/// towards the robot's speed in proportion to how infeasible it was:
/// `s <- s - rate * (s - 1) * (1 - mean_w)`.
pub fn run_session(cfg: &SynthDemoConfig, n_demos: usize, env: &SessionEnv<'_>) -> Result<DemoSession> {
    cfg.validate()?;
    if n_demos == 0 {
        return Err(Error::InvalidConfig("n_demos must be >= 1".into()));
    }
    let arm = if cfg.feedback_enabled { "fb" } else { "nofb" };
    let mut session = DemoSession::new(format!("synthetic-{arm}-{}", cfg.seed), cfg.feedback_enabled);
    let mut starts = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "starts"));
    let mut speed = cfg.speed_multiplier;
    for k in 0..n_demos {
        let initial = env.setup.sample_initial::<f64, _>(&mut starts);
        let demo_cfg = SynthDemoConfig {
            speed_multiplier: speed,
            seed: derive_seed(cfg.seed, &format!("demo-{k}")),
            ..cfg.clone()
        };
        let traj = synth_demo(
            &demo_cfg,
            format!("{}-{k:03}", session.demonstrator),
            initial.pose,
            initial.obs,
            env.limits,
            env.dt,
        )?;
        let profile = feasibility_profile(env.fdm, env.idm, &traj, env.sigma_w)?;
        if cfg.feedback_enabled {
            speed -= cfg.adaptation_rate * (speed - 1.0) * (1.0 - profile.mean);
        }
        session.push(traj, profile, Some(demo_cfg.speed_multiplier));
    }
    Ok(session)
}

/// One sample of a hand-drawn path. `theta` is optional; a missing value
/// repeats the previous one (0.5 at the start).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawPoint {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub theta: Option<f64>,
    /// Seconds.
    pub t: f64,
}

/// Resamples a drawn path at `round(duration / dt) + 1` evenly spaced
/// instants (at least 2) by linear interpolation, clamping into the
/// workspace. The first and last points are kept exactly.
pub fn ingest_human_demo(
    raw: &[RawPoint],
    dt: f64,
    obs: EnvObservation<f64>,
    id: impl Into<String>,
) -> Result<Trajectory<f64>> {
    if raw.len() < 2 {
        return Err(Error::InvalidDemo(format!("need at least 2 points, got {}", raw.len())));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidDemo(format!("dt must be positive, got {dt}")));
    }
    let mut theta = 0.5;
    let mut pts = Vec::with_capacity(raw.len());
    for (i, p) in raw.iter().enumerate() {
        if let Some(th) = p.theta {
            theta = th;
        }
        if ![p.x, p.y, theta, p.t].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidDemo(format!("point {i} is not finite")));
        }
        if i > 0 && p.t <= raw[i - 1].t {
            return Err(Error::InvalidDemo(format!(
                "timestamps must increase strictly (point {i})"
            )));
        }
        pts.push((p.t, [p.x, p.y, theta]));
    }
    let t0 = pts[0].0;
    let duration = pts[pts.len() - 1].0 - t0;
    let n = ((duration / dt).round() as usize + 1).max(2);
    let mut poses = Vec::with_capacity(n);
    let mut seg = 0;
    for k in 0..n {
        let p = if k == 0 {
            pts[0].1
        } else if k == n - 1 {
            pts[pts.len() - 1].1
        } else {
            let t = t0 + duration * k as f64 / (n - 1) as f64;
            while seg + 2 < pts.len() && pts[seg + 1].0 < t {
                seg += 1;
            }
            let (ta, a) = pts[seg];
            let (tb, b) = pts[seg + 1];
            let u = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
            std::array::from_fn(|i| a[i] + (b[i] - a[i]) * u)
        };
        poses.push(Pose::from_array(p).clamp_workspace());
    }
    Trajectory::new(id, TrajectorySource::HumanDemo, dt, obs, poses, None)
}
