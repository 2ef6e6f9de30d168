//! Properties that need trained dynamics models. The models are trained once
//! with the quick profile and shared by every test in this file.

use std::sync::OnceLock;

use fabco::demonstrators::{run_session, synth_demo, DemoSession, SessionEnv, SynthDemoConfig};
use fabco::dynamics::{build_dataset, train_fdm, train_idm, DynModel};
use fabco::feasibility::{color_for, colorize, feasibility_profile, feasibility_step, sigma_sweep};
use fabco::nn::TrainConfig;
use fabco::pipeline::{collect_robot_data, paired_feasibility_stats, ExperimentConfig};
use fabco::policy::{build_weighted_set, rollout, train_policy, PolicyConfig, ScriptedInsertion, Variant, ZeroPolicy};
use fabco::seed::derive_seed;
use fabco::sim::{generate_random_trajectory, Pose};
use fabco::stats::mean;
use fabco::trajectory::{Trajectory, TrajectorySource};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Fixture {
    cfg: ExperimentConfig,
    idm: DynModel<f64>,
    fdm: DynModel<f64>,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let cfg = ExperimentConfig::quick();
        let data = build_dataset(&collect_robot_data(&cfg).unwrap()).unwrap();
        let mut idm_cfg = cfg.idm.clone();
        idm_cfg.train.seed = derive_seed(cfg.seed, "idm");
        let mut fdm_cfg = cfg.fdm.clone();
        fdm_cfg.train.seed = derive_seed(cfg.seed, "fdm");
        let idm = train_idm(&data, &idm_cfg).unwrap().model;
        let fdm = train_fdm(&data, &fdm_cfg).unwrap().model;
        Fixture { cfg, idm, fdm }
    })
}

fn held_out(n: u64) -> Vec<Trajectory<f64>> {
    let f = fixture();
    let obs = f.cfg.task.nominal_obs().unwrap();
    (0..n)
        .map(|i| generate_random_trajectory(900_000 + i, &f.cfg.robot, &f.cfg.limits, f.cfg.dt, obs).unwrap())
        .collect()
}

fn env(f: &Fixture) -> SessionEnv<'_> {
    SessionEnv {
        setup: &f.cfg.task,
        limits: &f.cfg.limits,
        dt: f.cfg.dt,
        idm: &f.idm,
        fdm: &f.fdm,
        sigma_w: f.cfg.sigma_w,
    }
}

#[test]
fn identity_transition_infers_rest() {
    let f = fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let p = f.cfg.task.sample_initial::<f64, _>(&mut rng).pose;
        let a = f.idm.predict_action(p, p).unwrap();
        assert!(a.max_abs() < 0.05, "{p:?} -> {a:?}");
    }
}

#[test]
fn zero_action_keeps_the_pose() {
    let f = fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let p = f.cfg.task.sample_initial::<f64, _>(&mut rng).pose;
        let q = f.fdm.predict_pose(p, fabco::sim::Action::zero()).unwrap();
        let d = p.delta_to(&q);
        assert!(d.iter().all(|v| v.abs() < 0.01), "{p:?} -> {q:?}");
    }
}

#[test]
fn robot_motion_is_feasible() {
    let f = fixture();
    let mut means = Vec::new();
    for t in held_out(20) {
        let prof = feasibility_profile(&f.fdm, &f.idm, &t, f.cfg.sigma_w).unwrap();
        assert_eq!(prof.len(), t.len() - 1);
        assert!(prof.weights.iter().all(|w| *w > 0.0 && *w <= 1.0));
        means.push(prof.mean);
    }
    assert!(mean(&means) >= 0.8, "{means:?}");
    assert!(means.iter().all(|m| *m >= 0.7), "{means:?}");
}

#[test]
fn time_compression_lowers_feasibility() {
    let f = fixture();
    for t in held_out(20) {
        let fast: Vec<Pose<f64>> = t.poses().iter().step_by(3).copied().collect();
        let fast = Trajectory::new("fast", TrajectorySource::HumanDemo, t.dt(), *t.obs(), fast, None).unwrap();
        let slow = feasibility_profile(&f.fdm, &f.idm, &t, f.cfg.sigma_w).unwrap().mean;
        let quick = feasibility_profile(&f.fdm, &f.idm, &fast, f.cfg.sigma_w).unwrap().mean;
        assert!(quick < slow, "{}: {quick} vs {slow}", t.id());
    }
}

#[test]
fn two_state_profile_has_one_weight() {
    let f = fixture();
    let t = Trajectory::new(
        "pair",
        TrajectorySource::HumanDemo,
        0.1,
        f.cfg.task.nominal_obs().unwrap(),
        vec![Pose::new(0.3, 0.7, 0.5), Pose::new(0.31, 0.69, 0.5)],
        None,
    )
    .unwrap();
    let prof = feasibility_profile(&f.fdm, &f.idm, &t, 0.15).unwrap();
    assert_eq!(prof.len(), 1);
    let (w, e) = feasibility_step(&f.fdm, &f.idm, t.poses()[0], t.poses()[1], 0.15).unwrap();
    assert_eq!((prof.weights[0], prof.errors[0]), (w, e));
}

#[test]
fn single_state_profile_is_rejected() {
    let f = fixture();
    let t = Trajectory::new("one", TrajectorySource::HumanDemo, 0.1, f.cfg.task.nominal_obs().unwrap(), vec![Pose::new(0.3, 0.7, 0.5)], None)
        .unwrap();
    assert!(feasibility_profile(&f.fdm, &f.idm, &t, 0.15).is_err());
    assert!(feasibility_profile(&f.fdm, &f.idm, &held_out(1)[0], 0.0).is_err());
}

#[test]
fn colors_are_monotone_in_feasibility() {
    let f = fixture();
    let t = &held_out(1)[0];
    let prof = feasibility_profile(&f.fdm, &f.idm, t, 0.15).unwrap();
    let c = colorize(&prof, t).unwrap();
    assert_eq!(c.colors.len(), t.len() - 1);
    assert_eq!(c.polyline.len(), t.len());
    let green = |s: &str| u8::from_str_radix(&s[3..5], 16).unwrap();
    let red = |s: &str| u8::from_str_radix(&s[1..3], 16).unwrap();
    let mut pairs: Vec<(f64, &String)> = c.weights.iter().copied().zip(&c.colors).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    for w in pairs.windows(2) {
        assert!(green(w[0].1) <= green(w[1].1) && red(w[0].1) >= red(w[1].1));
    }
    assert_eq!(color_for(1.0), c.high_color);
    assert_eq!(color_for(1e-4), color_for(0.0));
}

#[test]
fn sweep_is_monotone_in_sigma() {
    let f = fixture();
    let sweep = sigma_sweep(&f.fdm, &f.idm, &held_out(5), &[0.05, 0.1, 0.15, 0.3]).unwrap();
    assert_eq!(sweep.len(), 4);
    for w in sweep.windows(2) {
        assert!(w[0].mean_feasibility <= w[1].mean_feasibility);
    }
}

#[test]
fn robot_data_keeps_high_weights() {
    let f = fixture();
    let demos = held_out(10);
    let set = build_weighted_set(&demos, &f.idm, &f.fdm, f.cfg.sigma_w, true).unwrap();
    assert_eq!(set.len(), 10 * 49);
    let low = set.records.iter().filter(|r| r.weight < 0.5).count();
    assert_eq!(low, 0, "{low} records below 0.5");
    let unit = build_weighted_set(&demos, &f.idm, &f.fdm, f.cfg.sigma_w, false).unwrap();
    assert!(unit.records.iter().all(|r| r.weight == 1.0));
    assert!(build_weighted_set(&[], &f.idm, &f.fdm, 0.15, true).is_err());
}

#[test]
fn faster_synthetic_demos_are_less_feasible() {
    let f = fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut slow, mut fast) = (Vec::new(), Vec::new());
    for k in 0..10 {
        let s = f.cfg.task.sample_initial::<f64, _>(&mut rng);
        for (speed, out) in [(1.0, &mut slow), (3.0, &mut fast)] {
            let dc = SynthDemoConfig { speed_multiplier: speed, seed: k, ..Default::default() };
            let d = synth_demo(&dc, "d", s.pose, s.obs, &f.cfg.limits, f.cfg.dt).unwrap();
            out.push(feasibility_profile(&f.fdm, &f.idm, &d, 0.15).unwrap().mean);
        }
    }
    assert!(mean(&slow) > mean(&fast) + 0.2, "{} vs {}", mean(&slow), mean(&fast));
}

fn session(feedback: bool, rate: f64) -> DemoSession {
    let f = fixture();
    let cfg = SynthDemoConfig {
        feedback_enabled: feedback,
        adaptation_rate: rate,
        seed: 17,
        ..Default::default()
    };
    run_session(&cfg, 30, &env(f)).unwrap()
}

#[test]
fn feedback_session_improves() {
    let f = fixture();
    let s = session(true, 0.5);
    let series = s.feasibility_series(&f.idm, &f.fdm, 0.15).unwrap();
    assert!(mean(&series[20..]) > mean(&series[..10]) + 0.1);
    // slower and slower: the window-5 mean never drops by much
    let smooth: Vec<f64> = series.windows(5).map(mean).collect();
    for w in smooth.windows(2) {
        assert!(w[1] >= w[0] - 0.05, "{smooth:?}");
    }
    let speeds: Vec<f64> = s.entries.iter().map(|e| e.speed_multiplier.unwrap()).collect();
    assert!(speeds.windows(2).all(|w| w[1] <= w[0] && w[1] >= 1.0));
    assert!(s.entries.iter().all(|e| e.profile.is_some()));
}

#[test]
fn sessions_without_feedback_keep_their_speed() {
    let f = fixture();
    let s = session(false, 0.5);
    assert!(s.entries.iter().all(|e| e.profile.is_none()));
    assert!(s.entries.iter().all(|e| e.speed_multiplier == Some(3.0)));
    let series = s.feasibility_series(&f.idm, &f.fdm, 0.15).unwrap();
    let fb = session(true, 0.5).feasibility_series(&f.idm, &f.fdm, 0.15).unwrap();
    let drift = (mean(&series[20..]) - mean(&series[..10])).abs();
    let gain = mean(&fb[20..]) - mean(&fb[..10]);
    assert!(drift < gain, "{drift} vs {gain}");
    let stats = paired_feasibility_stats(&fb, &series).unwrap();
    assert!(stats.with_feedback.mean > stats.without_feedback.mean);
    assert!(stats.welch.p_value.unwrap() < 0.01);
}

#[test]
fn zero_adaptation_behaves_like_no_feedback() {
    let a = session(true, 0.0);
    let b = session(false, 0.5);
    assert_eq!(a.trajectories().iter().map(|t| t.poses().to_vec()).collect::<Vec<_>>(), b.trajectories().iter().map(|t| t.poses().to_vec()).collect::<Vec<_>>());
    assert!(a.entries.iter().all(|e| e.speed_multiplier == Some(3.0)));
}

#[test]
fn session_directory_round_trip() {
    let s = session(true, 0.5);
    let dir = tempfile::tempdir().unwrap();
    s.save_dir(dir.path()).unwrap();
    let back = DemoSession::load_dir(dir.path()).unwrap();
    assert_eq!(back, s);
}

fn small_policy_cfg(seed: u64) -> PolicyConfig {
    PolicyConfig {
        hidden: vec![32, 32],
        train: TrainConfig { epochs: 5, batch_size: 32, seed, ..Default::default() },
    }
}

#[test]
fn zero_weight_duplicates_do_not_change_training() {
    let f = fixture();
    let demos = session(true, 0.5).trajectories();
    let set = build_weighted_set(&demos[..5], &f.idm, &f.fdm, 0.15, true).unwrap();
    let mut padded = set.clone();
    for r in set.records.iter().take(20) {
        let mut z = r.clone();
        z.weight = 0.0;
        padded.records.push(z);
    }
    let a = train_policy(&set, &small_policy_cfg(1), Variant::Fabco).unwrap();
    let b = train_policy(&padded, &small_policy_cfg(1), Variant::Fabco).unwrap();
    assert_eq!(a.model.regressor().net(), b.model.regressor().net());
    assert_eq!(a.outcome.train_losses, b.outcome.train_losses);
}

#[test]
fn policy_training_is_seeded() {
    let f = fixture();
    let demos = session(false, 0.5).trajectories();
    let set = build_weighted_set(&demos[..5], &f.idm, &f.fdm, 0.15, true).unwrap();
    let a = train_policy(&set, &small_policy_cfg(2), Variant::FabcoNoFb).unwrap().model;
    let b = train_policy(&set, &small_policy_cfg(2), Variant::FabcoNoFb).unwrap().model;
    assert_eq!(a.to_checkpoint().to_json().unwrap(), b.to_checkpoint().to_json().unwrap());
    let state = set.records[0].state;
    let act = a.predict(&state).unwrap();
    assert!(act.to_array().iter().all(|v| v.is_finite()));
    assert_eq!(a.variant(), Variant::FabcoNoFb);
}

#[test]
fn rollouts_follow_the_contract() {
    let f = fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let start = f.cfg.task.sample_initial::<f64, _>(&mut rng);
    let crit = f.cfg.task.criteria;
    let still = rollout(&ZeroPolicy, "z", start, &f.cfg.limits, f.cfg.dt, 40, &crit).unwrap();
    assert_eq!(still.trajectory.len(), 40);
    assert!(still.trajectory.poses().iter().all(|p| *p == start.pose));
    assert!(!still.success);
    let sc = ScriptedInsertion { limits: f.cfg.limits, dt: f.cfg.dt, hover_height: 0.1 };
    let r = rollout(&sc, "s", start, &f.cfg.limits, f.cfg.dt, 60, &crit).unwrap();
    assert!(r.success);
    let bound = f.cfg.limits.step_bound(f.cfg.dt);
    for w in r.trajectory.poses().windows(2) {
        let d = w[0].delta_to(&w[1]);
        assert!((0..3).all(|k| d[k].abs() <= bound[k] + 1e-12));
    }
}
