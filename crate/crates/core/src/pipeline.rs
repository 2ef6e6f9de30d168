//! End-to-end experiment: robot data, dynamics models, two demonstration
//! sessions, the four policy variants, evaluation and the report.
//!
//! With an output directory every stage persists its artifacts and a marker
//! holding the hash of the configuration it ran under. A rerun with the same
//! configuration loads those artifacts instead of recomputing them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::demonstrators::{run_session, DemoSession, SessionEnv, SynthDemoConfig};
use crate::dynamics::{
    build_dataset, train_fdm, train_idm, DatasetManifest, DynModel, DynModelConfig, IdmContext,
};
use crate::error::{Error, Result};
use crate::feasibility::DEFAULT_SIGMA_W;
use crate::nn::{Checkpoint, TrainConfig};
use crate::policy::{
    build_weighted_set_with, rollout, train_policy, Controller, PolicyConfig, PolicyModel, Variant,
};
use crate::seed::{derive_seed, sha256_hex};
use crate::sim::{
    generate_random_trajectory, RandomTrajectoryConfig, RobotLimits, State, TaskSetup,
};
use crate::stats::{mean, std_dev, welch_t_test, WelchTest};
use crate::trajectory::{save_jsonl, load_jsonl, write_jsonl, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub limits: RobotLimits<f64>,
    pub dt: f64,
    pub n_robot_trajectories: usize,
    pub robot: RandomTrajectoryConfig,
    pub idm: DynModelConfig,
    pub fdm: DynModelConfig,
    pub policy: PolicyConfig,
    pub sigma_w: f64,
    pub task: TaskSetup,
    /// Shared by both arms; `feedback_enabled` and `seed` are set per arm.
    pub demonstrator: SynthDemoConfig,
    pub n_demos: usize,
    pub n_eval_rollouts: usize,
    pub max_rollout_steps: usize,
    /// Where artifacts go; `None` keeps everything in memory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    /// Desk-scale defaults.
    pub fn desk() -> Self {
        Self {
            seed: 0,
            limits: RobotLimits::default(),
            dt: 0.1,
            n_robot_trajectories: 500,
            robot: RandomTrajectoryConfig::default(),
            idm: DynModelConfig::default(),
            fdm: DynModelConfig::default(),
            policy: PolicyConfig::default(),
            sigma_w: DEFAULT_SIGMA_W,
            task: TaskSetup::default(),
            demonstrator: SynthDemoConfig::default(),
            n_demos: 50,
            n_eval_rollouts: 30,
            max_rollout_steps: 60,
            output_dir: None,
        }
    }

    /// Smaller dynamics networks and mini-batches, for a run of a few
    /// minutes on one core.
    pub fn quick() -> Self {
        let dyn_cfg = DynModelConfig {
            hidden: vec![64, 128, 64],
            train: TrainConfig {
                batch_size: 64,
                epochs: 80,
                learning_rate: 3e-3,
                final_lr_fraction: 0.01,
                ..Default::default()
            },
            idm_context: IdmContext::TwoPose,
        };
        Self {
            idm: dyn_cfg.clone(),
            fdm: dyn_cfg,
            policy: PolicyConfig {
                hidden: vec![256, 128],
                train: TrainConfig {
                    batch_size: 64,
                    epochs: 200,
                    ..Default::default()
                },
            },
            ..Self::desk()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "quick" => Ok(Self::quick()),
            _ => Err(Error::InvalidConfig(format!("unknown profile `{name}` (expected desk or quick)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.limits.validate()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidConfig("dt must be positive".into()));
        }
        if self.n_robot_trajectories == 0 {
            return Err(Error::InvalidConfig("n_robot_trajectories must be >= 1".into()));
        }
        self.robot.validate()?;
        self.idm.train.validate()?;
        self.fdm.train.validate()?;
        self.policy.train.validate()?;
        if !(self.sigma_w > 0.0 && self.sigma_w.is_finite()) {
            return Err(Error::InvalidConfig("sigma_w must be positive".into()));
        }
        self.task.validate()?;
        self.demonstrator.validate()?;
        if self.n_demos == 0 {
            return Err(Error::InvalidConfig("n_demos must be >= 1".into()));
        }
        if self.n_eval_rollouts == 0 {
            return Err(Error::InvalidConfig("n_eval_rollouts must be >= 1".into()));
        }
        if self.max_rollout_steps == 0 {
            return Err(Error::InvalidConfig("max_rollout_steps must be >= 1".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }

    /// SHA-256 of the configuration without its output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            task: self.task.clone(),
            limits: self.limits,
            dt: self.dt,
            n_rollouts: self.n_eval_rollouts,
            max_steps: self.max_rollout_steps,
            seed: derive_seed(self.seed, "eval"),
        }
    }

    /// Demonstrator settings of one session arm.
    pub fn session_config(&self, feedback: bool) -> SynthDemoConfig {
        SynthDemoConfig {
            feedback_enabled: feedback,
            // both arms see the same start states
            seed: derive_seed(self.seed, "sessions"),
            ..self.demonstrator.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub task: TaskSetup,
    pub limits: RobotLimits<f64>,
    pub dt: f64,
    pub n_rollouts: usize,
    pub max_steps: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        ExperimentConfig::desk().eval_config()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutLog {
    pub index: usize,
    pub success: bool,
    pub steps: usize,
    pub start: [f64; 3],
    pub slot: [f64; 3],
    pub final_pose: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub variant: Option<Variant>,
    pub n_rollouts: usize,
    pub successes: usize,
    pub rate: f64,
    pub rollouts: Vec<RolloutLog>,
}

impl Evaluation {
    /// `successes/n (pct%)`, e.g. `28/30 (93.3%)`.
    pub fn summary(&self) -> String {
        format!("{}/{} ({:.1}%)", self.successes, self.n_rollouts, 100.0 * self.rate)
    }
}

/// Seeded start states for evaluation; identical for every controller.
pub fn eval_starts(cfg: &EvalConfig) -> Vec<State<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.n_rollouts).map(|_| cfg.task.sample_initial(&mut rng)).collect()
}

pub fn evaluate_policy<C: Controller<f64> + ?Sized>(controller: &C, cfg: &EvalConfig) -> Result<Evaluation> {
    if cfg.n_rollouts == 0 {
        return Err(Error::InvalidConfig("n_rollouts must be >= 1".into()));
    }
    let mut rollouts = Vec::with_capacity(cfg.n_rollouts);
    for (index, start) in eval_starts(cfg).into_iter().enumerate() {
        let r = rollout(
            controller,
            format!("eval-{index:03}"),
            start,
            &cfg.limits,
            cfg.dt,
            cfg.max_steps,
            &cfg.task.criteria,
        )?;
        rollouts.push(RolloutLog {
            index,
            success: r.success,
            steps: r.trajectory.len(),
            start: start.pose.to_array(),
            slot: start.obs.slot_pose.to_array(),
            final_pose: r.trajectory.poses().last().expect("non-empty").to_array(),
        });
    }
    let successes = rollouts.iter().filter(|r| r.success).count();
    Ok(Evaluation {
        variant: None,
        n_rollouts: cfg.n_rollouts,
        successes,
        rate: successes as f64 / cfg.n_rollouts as f64,
        rollouts,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub n_demos: usize,
    pub mean: f64,
    /// Sample standard deviation; `None` for a single demonstration.
    pub std: Option<f64>,
}

impl ArmSummary {
    fn of(xs: &[f64]) -> Self {
        let s = std_dev(xs);
        Self {
            n_demos: xs.len(),
            mean: mean(xs),
            std: s.is_finite().then_some(s),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityComparison {
    pub with_feedback: ArmSummary,
    pub without_feedback: ArmSummary,
    pub welch: WelchTest,
}

/// Compares per-demonstration mean feasibilities of two sessions.
pub fn paired_feasibility_stats(with_fb: &[f64], without_fb: &[f64]) -> Result<FeasibilityComparison> {
    if with_fb.is_empty() || without_fb.is_empty() {
        return Err(Error::Empty("feasibility series"));
    }
    Ok(FeasibilityComparison {
        with_feedback: ArmSummary::of(with_fb),
        without_feedback: ArmSummary::of(without_fb),
        welch: welch_t_test(with_fb, without_fb),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub demonstrator: String,
    pub feedback_enabled: bool,
    pub n_demos: usize,
    pub n_transitions: usize,
    /// Mean feasibility of each demonstration, in session order.
    pub series: Vec<f64>,
    pub mean: f64,
    pub std: Option<f64>,
    pub first10_mean: f64,
    pub last10_mean: f64,
    pub speed_multipliers: Vec<Option<f64>>,
}

impl ArmReport {
    fn new(session: &DemoSession, series: Vec<f64>) -> Self {
        let k = series.len().min(10);
        let s = std_dev(&series);
        Self {
            demonstrator: session.demonstrator.clone(),
            feedback_enabled: session.feedback_enabled,
            n_demos: session.len(),
            n_transitions: session.entries.iter().map(|e| e.trajectory.len() - 1).sum(),
            mean: mean(&series),
            std: s.is_finite().then_some(s),
            first10_mean: mean(&series[..k]),
            last10_mean: mean(&series[series.len() - k..]),
            speed_multipliers: session.entries.iter().map(|e| e.speed_multiplier).collect(),
            series,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: Variant,
    pub demos_from: String,
    pub weighted: bool,
    pub n_records: usize,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub evaluation: Evaluation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsReport {
    pub dataset: DatasetManifest,
    pub idm_best_val_loss: f64,
    pub fdm_best_val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub config_hash: String,
    pub seed: u64,
    pub sigma_w: f64,
    /// How per-step weights become a per-demonstration feasibility.
    pub feasibility_aggregate: String,
    pub dynamics: DynamicsReport,
    pub arms: BTreeMap<String, ArmReport>,
    pub feasibility_comparison: FeasibilityComparison,
    pub variants: Vec<VariantReport>,
    /// SHA-256 of every dataset and checkpoint the numbers derive from.
    pub provenance: BTreeMap<String, String>,
}

impl AblationReport {
    pub fn variant(&self, v: Variant) -> Option<&VariantReport> {
        self.variants.iter().find(|r| r.variant == v)
    }

    pub fn rate(&self, v: Variant) -> Option<f64> {
        self.variant(v).map(|r| r.evaluation.rate)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Success-rate table with one column per method, plus the feasibility
    /// summary of both arms.
    pub fn table(&self) -> String {
        let label = |v: Variant| match v {
            Variant::Fabco => "FABCO",
            Variant::FabcoNoWeight => "FABCO w/o weighting",
            Variant::FabcoNoFb => "FABCO w/o FB",
            Variant::Bco => "BCO",
        };
        let mut cols = vec![("Method".to_string(), "Success rate".to_string(), "Successes".to_string())];
        for r in &self.variants {
            cols.push((
                label(r.variant).to_string(),
                format!("{:.1}%", 100.0 * r.evaluation.rate),
                format!("{}/{}", r.evaluation.successes, r.evaluation.n_rollouts),
            ));
        }
        let widths: Vec<usize> = cols.iter().map(|c| c.0.len().max(c.1.len()).max(c.2.len())).collect();
        let row = |f: &dyn Fn(&(String, String, String)) -> &str| {
            let cells: Vec<String> = cols.iter().zip(&widths).map(|(c, w)| format!(" {:<w$} ", f(c))).collect();
            format!("|{}|\n", cells.join("|"))
        };
        let rule = format!(
            "+{}+\n",
            widths.iter().map(|w| "-".repeat(w + 2)).collect::<Vec<_>>().join("+")
        );
        let mut out = format!("Success rates (seed {}, config {})\n", self.seed, &self.config_hash[..12]);
        out += &rule;
        out += &row(&|c| &c.0);
        out += &rule;
        out += &row(&|c| &c.1);
        out += &row(&|c| &c.2);
        out += &rule;
        let _ = writeln!(out, "\nDemonstration feasibility ({}, sigma_w = {})", self.feasibility_aggregate, self.sigma_w);
        for (name, arm) in &self.arms {
            let _ = writeln!(
                out,
                "  {name:<6} n={:<3} mean {:.3} std {}  first10 {:.3}  last10 {:.3}",
                arm.n_demos,
                arm.mean,
                arm.std.map_or("n/a".to_string(), |s| format!("{s:.3}")),
                arm.first10_mean,
                arm.last10_mean,
            );
        }
        let w = &self.feasibility_comparison.welch;
        let fmt = |x: Option<f64>, p: usize| x.map_or("undefined".to_string(), |v| format!("{v:.p$}"));
        let _ = writeln!(out, "  Welch t = {}, df = {}, p = {}", fmt(w.t, 3), fmt(w.df, 1), w.p_value.map_or("undefined".to_string(), |p| format!("{p:.3e}")));
        out
    }
}

/// Pipeline stages, in execution order.
pub const STAGES: [&str; 6] = ["collect_robot", "train_dynamics", "demo_sessions", "train_policies", "evaluate", "report"];

#[derive(Serialize, Deserialize)]
struct StageMarker {
    stage: String,
    config_hash: String,
    artifacts: BTreeMap<String, String>,
}

struct Store {
    dir: Option<PathBuf>,
    config_hash: String,
}

impl Store {
    fn path(&self, rel: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(rel))
    }

    fn marker_path(&self, stage: &str) -> Option<PathBuf> {
        self.path(&format!("stages/{stage}.json"))
    }

    /// Artifacts of a stage that already completed under this config.
    fn completed(&self, stage: &str) -> Option<BTreeMap<String, String>> {
        let p = self.marker_path(stage)?;
        let m: StageMarker = serde_json::from_str(&fs::read_to_string(p).ok()?).ok()?;
        if m.config_hash != self.config_hash {
            return None;
        }
        // every recorded artifact must still be on disk and unchanged
        for (rel, hash) in &m.artifacts {
            let bytes = fs::read(self.path(rel)?).ok()?;
            if &sha256_hex(&bytes) != hash {
                return None;
            }
        }
        Some(m.artifacts)
    }

    fn write(&self, rel: &str, bytes: &[u8], artifacts: &mut BTreeMap<String, String>) -> Result<()> {
        artifacts.insert(rel.to_string(), sha256_hex(bytes));
        if let Some(p) = self.path(rel) {
            if let Some(parent) = p.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }

    fn finish(&self, stage: &str, artifacts: BTreeMap<String, String>) -> Result<()> {
        if let Some(p) = self.marker_path(stage) {
            let marker = StageMarker {
                stage: stage.to_string(),
                config_hash: self.config_hash.clone(),
                artifacts,
            };
            let parent = p.parent().expect("marker has a parent");
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            fs::write(&p, serde_json::to_string_pretty(&marker)?).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

fn jsonl_bytes(trajs: &[Trajectory<f64>]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, trajs)?;
    Ok(buf)
}

/// Progress notifications: stage name and overall fraction done.
pub type Progress<'a> = &'a mut dyn FnMut(&'static str, f64);

pub fn collect_robot_data(cfg: &ExperimentConfig) -> Result<Vec<Trajectory<f64>>> {
    let obs = cfg.task.nominal_obs()?;
    let base = derive_seed(cfg.seed, "robot");
    (0..cfg.n_robot_trajectories as u64)
        .map(|i| {
            let t = generate_random_trajectory(base.wrapping_add(i), &cfg.robot, &cfg.limits, cfg.dt, obs)?;
            Ok(t.with_id(format!("robot-{i:05}")))
        })
        .collect()
}

/// Runs the whole experiment; see the module docs for resume behavior.
pub fn run_full_experiment(cfg: &ExperimentConfig) -> Result<AblationReport> {
    run_with_progress(cfg, &mut |_, _| {})
}

pub fn run_with_progress(cfg: &ExperimentConfig, progress: Progress<'_>) -> Result<AblationReport> {
    cfg.validate()?;
    let store = Store {
        dir: cfg.output_dir.clone(),
        config_hash: cfg.hash(),
    };
    if let Some(d) = &store.dir {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        fs::write(d.join("config.json"), serde_json::to_string_pretty(cfg)?).map_err(|e| Error::io(d, e))?;
    }
    let mut provenance = BTreeMap::new();
    let n = STAGES.len() as f64;
    let mut tick = |i: usize| progress(STAGES[i.min(STAGES.len() - 1)], i as f64 / n);

    // robot data
    tick(0);
    let stage = "collect_robot";
    let robot = match store.completed(stage) {
        Some(_) => load_jsonl(&store.path("robot/trajectories.jsonl").expect("stored")).map_err(|e| e.in_stage(stage))?,
        None => {
            let trajs = collect_robot_data(cfg).map_err(|e| e.in_stage(stage))?;
            let mut art = BTreeMap::new();
            store.write("robot/trajectories.jsonl", &jsonl_bytes(&trajs)?, &mut art)?;
            store.finish(stage, art)?;
            trajs
        }
    };
    let robot_bytes = jsonl_bytes(&robot)?;
    provenance.insert("robot/trajectories.jsonl".to_string(), sha256_hex(&robot_bytes));

    // dynamics
    tick(1);
    let stage = "train_dynamics";
    let data = build_dataset(&robot).map_err(|e| e.in_stage(stage))?;
    let manifest = data.manifest(&cfg.limits, cfg.dt);
    let (idm, fdm) = match store.completed(stage) {
        Some(_) => (
            DynModel::load(&store.path("dynamics/idm.json").expect("stored")).map_err(|e| e.in_stage(stage))?,
            DynModel::load(&store.path("dynamics/fdm.json").expect("stored")).map_err(|e| e.in_stage(stage))?,
        ),
        None => {
            let mut idm_cfg = cfg.idm.clone();
            idm_cfg.train.seed = derive_seed(cfg.seed, "idm");
            let mut fdm_cfg = cfg.fdm.clone();
            fdm_cfg.train.seed = derive_seed(cfg.seed, "fdm");
            let idm = train_idm(&data, &idm_cfg).map_err(|e| e.in_stage(stage))?;
            let fdm = train_fdm(&data, &fdm_cfg).map_err(|e| e.in_stage(stage))?;
            let mut art = BTreeMap::new();
            store.write("dynamics/idm.json", idm.model.to_checkpoint().to_json()?.as_bytes(), &mut art)?;
            store.write("dynamics/fdm.json", fdm.model.to_checkpoint().to_json()?.as_bytes(), &mut art)?;
            store.write("dynamics/manifest.json", serde_json::to_string_pretty(&manifest)?.as_bytes(), &mut art)?;
            let curves = serde_json::json!({
                "idm": {"train": idm.outcome.train_losses, "val": idm.outcome.val_losses, "best_epoch": idm.outcome.best_epoch},
                "fdm": {"train": fdm.outcome.train_losses, "val": fdm.outcome.val_losses, "best_epoch": fdm.outcome.best_epoch},
            });
            store.write("dynamics/curves.json", serde_json::to_string_pretty(&curves)?.as_bytes(), &mut art)?;
            store.finish(stage, art)?;
            (idm.model, fdm.model)
        }
    };
    provenance.insert("dynamics/idm.json".to_string(), sha256_hex(idm.to_checkpoint().to_json()?.as_bytes()));
    provenance.insert("dynamics/fdm.json".to_string(), sha256_hex(fdm.to_checkpoint().to_json()?.as_bytes()));

    // demonstration sessions
    tick(2);
    let stage = "demo_sessions";
    let arms = [("fb", true), ("nofb", false)];
    let sessions: Vec<DemoSession> = match store.completed(stage) {
        Some(_) => arms
            .iter()
            .map(|(name, _)| DemoSession::load_dir(&store.path(&format!("sessions/{name}")).expect("stored")))
            .collect::<Result<_>>()
            .map_err(|e| e.in_stage(stage))?,
        None => {
            let env = SessionEnv {
                setup: &cfg.task,
                limits: &cfg.limits,
                dt: cfg.dt,
                idm: &idm,
                fdm: &fdm,
                sigma_w: cfg.sigma_w,
            };
            let sessions = arms
                .iter()
                .map(|&(_, fb)| run_session(&cfg.session_config(fb), cfg.n_demos, &env))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.in_stage(stage))?;
            let mut art = BTreeMap::new();
            for ((name, _), s) in arms.iter().zip(&sessions) {
                if let Some(p) = store.path(&format!("sessions/{name}")) {
                    s.save_dir(&p)?;
                }
                store.write(&format!("sessions/{name}.jsonl"), &jsonl_bytes(&s.trajectories())?, &mut art)?;
            }
            store.finish(stage, art)?;
            sessions
        }
    };
    let mut profiles = Vec::new();
    for ((name, _), s) in arms.iter().zip(&sessions) {
        provenance.insert(format!("sessions/{name}.jsonl"), sha256_hex(&jsonl_bytes(&s.trajectories())?));
        profiles.push(s.profiles(&idm, &fdm, cfg.sigma_w)?);
    }

    // policies
    tick(3);
    let stage = "train_policies";
    let mut policy_cfg = cfg.policy.clone();
    policy_cfg.train.seed = derive_seed(cfg.seed, "policy");
    let cached = store.completed(stage);
    let mut policies = Vec::new();
    let mut art = BTreeMap::new();
    for v in Variant::ALL {
        let arm = if v.uses_feedback_demos() { 0 } else { 1 };
        let set = build_weighted_set_with(&sessions[arm].trajectories(), &profiles[arm], &idm, v.weighted())
            .map_err(|e| e.in_stage(stage))?;
        let rel = format!("policies/{}.json", v.name());
        let (model, best_epoch) = match &cached {
            Some(_) => {
                let ck = Checkpoint::<f64>::load(&store.path(&rel).expect("stored")).map_err(|e| e.in_stage(stage))?;
                let epoch = ck.meta.get("best_epoch").and_then(|x| x.as_u64()).unwrap_or(0) as usize;
                (PolicyModel::from_checkpoint(&ck)?, epoch)
            }
            None => {
                let t = train_policy(&set, &policy_cfg, v).map_err(|e| e.in_stage(stage))?;
                let mut ck = t.model.to_checkpoint();
                ck.meta.insert("best_epoch".into(), serde_json::json!(t.outcome.best_epoch));
                ck.meta.insert("n_records".into(), serde_json::json!(set.len()));
                store.write(&rel, ck.to_json()?.as_bytes(), &mut art)?;
                (t.model, t.outcome.best_epoch)
            }
        };
        provenance.insert(rel, sha256_hex(model.to_checkpoint().to_json()?.as_bytes()));
        policies.push((v, set.len(), best_epoch, model));
    }
    if cached.is_none() {
        store.finish(stage, art)?;
    }

    // evaluation
    tick(4);
    let stage = "evaluate";
    let eval_cfg = cfg.eval_config();
    let mut variants = Vec::new();
    let cached = store.completed(stage);
    let mut art = BTreeMap::new();
    for (v, n_records, best_epoch, model) in &policies {
        let rel = format!("eval/{}.json", v.name());
        let evaluation = match &cached {
            Some(_) => {
                let p = store.path(&rel).expect("stored");
                serde_json::from_str(&fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)?
            }
            None => {
                let mut e = evaluate_policy(model, &eval_cfg).map_err(|e| e.in_stage(stage))?;
                e.variant = Some(*v);
                store.write(&rel, serde_json::to_string_pretty(&e)?.as_bytes(), &mut art)?;
                e
            }
        };
        variants.push(VariantReport {
            variant: *v,
            demos_from: if v.uses_feedback_demos() { "fb" } else { "nofb" }.to_string(),
            weighted: v.weighted(),
            n_records: *n_records,
            best_val_loss: model.best_val_loss(),
            best_epoch: *best_epoch,
            evaluation,
        });
    }
    if cached.is_none() {
        store.finish(stage, art)?;
    }

    // report
    tick(5);
    let series: Vec<Vec<f64>> = profiles.iter().map(|ps| ps.iter().map(|p| p.mean).collect()).collect();
    let comparison = paired_feasibility_stats(&series[0], &series[1]).map_err(|e| e.in_stage("report"))?;
    let mut arm_reports = BTreeMap::new();
    for ((name, _), (s, ser)) in arms.iter().zip(sessions.iter().zip(series)) {
        arm_reports.insert(name.to_string(), ArmReport::new(s, ser));
    }
    let report = AblationReport {
        config_hash: store.config_hash.clone(),
        seed: cfg.seed,
        sigma_w: cfg.sigma_w,
        feasibility_aggregate: "mean per demonstration".to_string(),
        dynamics: DynamicsReport {
            dataset: manifest,
            idm_best_val_loss: idm.best_val_loss(),
            fdm_best_val_loss: fdm.best_val_loss(),
        },
        arms: arm_reports,
        feasibility_comparison: comparison,
        variants,
        provenance,
    };
    let mut art = BTreeMap::new();
    store.write("report.json", report.to_json()?.as_bytes(), &mut art)?;
    store.write("report.txt", report.table().as_bytes(), &mut art)?;
    store.finish("report", art)?;
    progress("done", 1.0);
    Ok(report)
}

/// Saves a trajectory set next to a manifest of its ids and speed audit.
pub fn save_robot_data(dir: &Path, trajs: &[Trajectory<f64>], limits: &RobotLimits<f64>, dt: f64) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_jsonl(&dir.join("trajectories.jsonl"), trajs)?;
    let manifest = build_dataset(trajs)?.manifest(limits, dt);
    let p = dir.join("manifest.json");
    fs::write(&p, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&p, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{ScriptedInsertion, ZeroPolicy};

    #[test]
    fn profiles_validate() {
        ExperimentConfig::desk().validate().unwrap();
        ExperimentConfig::quick().validate().unwrap();
        assert!(ExperimentConfig::profile("huge").is_err());
        let bad = ExperimentConfig { n_eval_rollouts: 0, ..ExperimentConfig::quick() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn desk_defaults() {
        let c = ExperimentConfig::desk();
        assert_eq!(c.n_robot_trajectories, 500);
        assert_eq!(c.n_demos, 50);
        assert_eq!(c.n_eval_rollouts, 30);
        assert_eq!(c.sigma_w, 0.15);
        assert_eq!(c.idm.hidden, vec![64, 256, 256, 64]);
        assert_eq!(c.policy.hidden, vec![256, 128]);
        assert_eq!(c.policy.train.batch_size, 256);
        assert_eq!(c.idm.train.epochs, 200);
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = ExperimentConfig::quick();
        let b = ExperimentConfig { output_dir: Some("/tmp/x".into()), ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig { seed: 1, ..a.clone() };
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn config_round_trips_through_json() {
        let c = ExperimentConfig::quick();
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"seed": 9, "n_demos": 5}"#).unwrap();
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.n_eval_rollouts, 30);
    }

    #[test]
    fn scripted_controller_always_succeeds() {
        let cfg = ExperimentConfig::desk();
        let ctl = ScriptedInsertion { limits: cfg.limits, dt: cfg.dt, hover_height: 0.1 };
        let e = evaluate_policy(&ctl, &cfg.eval_config()).unwrap();
        assert_eq!(e.rate, 1.0);
        assert_eq!(e.successes, 30);
    }

    #[test]
    fn zero_policy_never_succeeds() {
        let e = evaluate_policy(&ZeroPolicy, &EvalConfig::default()).unwrap();
        assert_eq!(e.rate, 0.0);
        assert!(e.rollouts.iter().all(|r| r.steps == e.rollouts[0].steps && r.start == r.final_pose));
    }

    #[test]
    fn summary_format() {
        let e = Evaluation { variant: None, n_rollouts: 30, successes: 28, rate: 28.0 / 30.0, rollouts: vec![] };
        assert_eq!(e.summary(), "28/30 (93.3%)");
    }

    #[test]
    fn stats_of_identical_sessions() {
        let s = [0.3, 0.5, 0.4];
        let c = paired_feasibility_stats(&s, &s).unwrap();
        assert_eq!(c.welch.t, Some(0.0));
        assert!(paired_feasibility_stats(&[], &s).is_err());
        let single = paired_feasibility_stats(&[0.5], &s).unwrap();
        assert!(!single.welch.defined);
        assert!(single.with_feedback.std.is_none());
    }

    #[test]
    fn robot_data_is_seeded() {
        let cfg = ExperimentConfig { n_robot_trajectories: 3, ..ExperimentConfig::quick() };
        let a = collect_robot_data(&cfg).unwrap();
        assert_eq!(a, collect_robot_data(&cfg).unwrap());
        assert_eq!(a.len(), 3);
        assert_eq!(a[2].id(), "robot-00002");
        let b = collect_robot_data(&ExperimentConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a[0].poses(), b[0].poses());
    }
}
