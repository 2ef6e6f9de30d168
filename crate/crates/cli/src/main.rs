use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{ArgGroup, Parser, Subcommand};
use fabco::demonstrators::{ingest_human_demo, run_session, DemoSession, RawPoint, SessionEnv};
use fabco::dynamics::{build_dataset, train_fdm, train_idm, DynModel};
use fabco::feasibility::{colorize, feasibility_profile, render_svg, sigma_sweep};
use fabco::pipeline::{collect_robot_data, evaluate_policy, run_with_progress, save_robot_data, ExperimentConfig};
use fabco::policy::{build_weighted_set, train_policy, Controller, PolicyModel, ScriptedInsertion, Variant, ZeroPolicy};
use fabco::seed::derive_seed;
use fabco::trajectory::{load_jsonl, Trajectory};
use fabco_service::jobs::merge_config;
use fabco_service::{AppState, ServiceConfig, BIND_ENV, DEFAULT_BIND};

#[derive(Parser)]
#[command(name = "fabco", version, about = "Feasibility-aware behavior cloning from observation on a simulated planar robot")]
struct Cli {
    /// JSON experiment configuration; fields it leaves out keep the profile's values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in configuration to start from: desk or quick.
    #[arg(long, global = true, default_value = "desk")]
    profile: String,
    /// Overrides the experiment seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Record random robot trajectories with the tracking controller.
    CollectRobot {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the inverse and forward dynamics models on robot data.
    TrainDynamics {
        /// A trajectories JSONL file, or a directory containing trajectories.jsonl.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Record a demonstration session, scored against the dynamics models.
    #[command(group(ArgGroup::new("arm").required(true).args(["fb", "no_fb"])))]
    #[command(group(ArgGroup::new("source").required(true).args(["synthetic", "from_dir"])))]
    DemoSession {
        /// Show feasibility feedback to the demonstrator.
        #[arg(long)]
        fb: bool,
        #[arg(long)]
        no_fb: bool,
        /// Use the synthetic demonstrator.
        #[arg(long)]
        synthetic: bool,
        /// Read drawings (`*.json`, each a list of points or `{"points": [...]}`) in name order.
        #[arg(long)]
        from_dir: Option<PathBuf>,
        /// Number of synthetic demonstrations; defaults to the configuration's.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        dynamics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-step feasibility of demonstrations, with an optional sigma sweep and SVG plots.
    Score {
        #[arg(long)]
        dynamics: PathBuf,
        /// A trajectories JSONL file or a session directory.
        #[arg(long)]
        demos: PathBuf,
        /// Comma-separated sigma_w values to sweep.
        #[arg(long, value_delimiter = ',')]
        sigma: Vec<f64>,
        /// Directory for one colored SVG per demonstration.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Train one policy variant on a recorded session.
    TrainPolicy {
        #[arg(long, value_parser = parse_variant)]
        variant: Variant,
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        dynamics: PathBuf,
        /// Checkpoint file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Success rate of a policy over randomized starts.
    Evaluate {
        /// Policy checkpoint, or `scripted` / `zero`.
        #[arg(long)]
        policy: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full experiment and print the success-rate table.
    Ablation {
        /// Artifact directory; reruns with the same configuration resume from it.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the report as JSON instead of the table.
        #[arg(long)]
        json: bool,
    },
    /// Start the HTTP and WebSocket service.
    Serve {
        #[arg(long, env = BIND_ENV, default_value = DEFAULT_BIND)]
        bind: String,
        #[arg(long, default_value = "fabco-data")]
        data_dir: PathBuf,
        /// Delay between streamed rollout events.
        #[arg(long, default_value_t = 50)]
        stream_interval_ms: u64,
    },
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    Variant::ALL
        .into_iter()
        .find(|v| v.name() == s)
        .ok_or_else(|| format!("expected one of {}", Variant::ALL.map(|v| v.name()).join(", ")))
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let base = ExperimentConfig::profile(&cli.profile)?;
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let fragment: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            merge_config(&base, &fragment).map_err(|e| anyhow!("{}: {}", p.display(), e.message))?
        }
        None => base,
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_dynamics(dir: &Path) -> Result<(DynModel<f64>, DynModel<f64>)> {
    let idm = DynModel::load(&dir.join("idm.json")).with_context(|| format!("loading the IDM from {}", dir.display()))?;
    let fdm = DynModel::load(&dir.join("fdm.json")).with_context(|| format!("loading the FDM from {}", dir.display()))?;
    Ok((idm, fdm))
}

fn load_trajectories(p: &Path) -> Result<Vec<Trajectory<f64>>> {
    if p.is_dir() {
        Ok(load_jsonl(&p.join("trajectories.jsonl"))?)
    } else {
        Ok(load_jsonl(p)?)
    }
}

fn read_drawing(p: &Path) -> Result<(Vec<RawPoint>, Option<f64>)> {
    #[derive(serde::Deserialize)]
    #[serde(untagged)]
    enum Drawing {
        Points(Vec<RawPoint>),
        Request { points: Vec<RawPoint>, #[serde(default)] dt: Option<f64> },
    }
    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    match serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))? {
        Drawing::Points(pts) => Ok((pts, None)),
        Drawing::Request { points, dt } => Ok((points, dt)),
    }
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::CollectRobot { out } => {
            let trajs = collect_robot_data(&cfg)?;
            let m = save_robot_data(&out, &trajs, &cfg.limits, cfg.dt)?;
            println!(
                "wrote {} trajectories ({} transitions) to {}; speed audit {}",
                trajs.len(),
                m.n_transitions,
                out.display(),
                if m.speed_audit.passed { "passed" } else { "FAILED" }
            );
        }
        Command::TrainDynamics { data, out } => {
            let data = build_dataset(&load_trajectories(&data)?)?;
            let mut idm_cfg = cfg.idm.clone();
            idm_cfg.train.seed = derive_seed(cfg.seed, "idm");
            let mut fdm_cfg = cfg.fdm.clone();
            fdm_cfg.train.seed = derive_seed(cfg.seed, "fdm");
            let idm = train_idm(&data, &idm_cfg)?;
            let fdm = train_fdm(&data, &fdm_cfg)?;
            fs::create_dir_all(&out)?;
            idm.model.save(&out.join("idm.json"))?;
            fdm.model.save(&out.join("fdm.json"))?;
            let curves = serde_json::json!({
                "idm": {"train": idm.outcome.train_losses, "val": idm.outcome.val_losses, "best_epoch": idm.outcome.best_epoch},
                "fdm": {"train": fdm.outcome.train_losses, "val": fdm.outcome.val_losses, "best_epoch": fdm.outcome.best_epoch},
            });
            fs::write(out.join("curves.json"), serde_json::to_string_pretty(&curves)?)?;
            println!(
                "{} transitions; IDM best validation L1 {:.5} (epoch {}), FDM {:.5} (epoch {}); saved to {}",
                data.len(),
                idm.outcome.best_val_loss,
                idm.outcome.best_epoch,
                fdm.outcome.best_val_loss,
                fdm.outcome.best_epoch,
                out.display()
            );
        }
        Command::DemoSession { fb, no_fb: _, synthetic: _, from_dir, n, dynamics, out } => {
            let (idm, fdm) = load_dynamics(&dynamics)?;
            let session = match from_dir {
                None => {
                    let env = SessionEnv {
                        setup: &cfg.task,
                        limits: &cfg.limits,
                        dt: cfg.dt,
                        idm: &idm,
                        fdm: &fdm,
                        sigma_w: cfg.sigma_w,
                    };
                    run_session(&cfg.session_config(fb), n.unwrap_or(cfg.n_demos), &env)?
                }
                Some(dir) => {
                    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
                        .with_context(|| format!("reading {}", dir.display()))?
                        .filter_map(|e| e.ok().map(|e| e.path()))
                        .filter(|p| p.extension().is_some_and(|x| x == "json"))
                        .collect();
                    files.sort();
                    if files.is_empty() {
                        bail!("no *.json drawings in {}", dir.display());
                    }
                    let obs = cfg.task.nominal_obs()?;
                    let mut s = DemoSession::new("human", fb);
                    for f in files {
                        let (pts, dt) = read_drawing(&f)?;
                        let id = f.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                        let t = ingest_human_demo(&pts, dt.unwrap_or(cfg.dt), obs, id).with_context(|| f.display().to_string())?;
                        let p = feasibility_profile(&fdm, &idm, &t, cfg.sigma_w)?;
                        s.push(t, p, None);
                    }
                    s
                }
            };
            session.save_dir(&out)?;
            let series = session.feasibility_series(&idm, &fdm, cfg.sigma_w)?;
            for (e, w) in session.entries.iter().zip(&series) {
                println!("{:<28} {:>4} states  mean w {:.3}", e.trajectory.id(), e.trajectory.len(), w);
            }
            println!(
                "{} demonstrations ({}) saved to {}",
                session.len(),
                if fb { "with feedback" } else { "without feedback" },
                out.display()
            );
        }
        Command::Score { dynamics, demos, sigma, svg } => {
            let (idm, fdm) = load_dynamics(&dynamics)?;
            let trajs = load_trajectories(&demos)?;
            if let Some(d) = &svg {
                fs::create_dir_all(d)?;
            }
            println!("{:<28} {:>6} {:>8} {:>8}   (sigma_w = {})", "demonstration", "steps", "mean w", "min w", cfg.sigma_w);
            for t in &trajs {
                let p = feasibility_profile(&fdm, &idm, t, cfg.sigma_w)?;
                println!("{:<28} {:>6} {:>8.3} {:>8.3}", t.id(), p.len(), p.mean, p.min);
                if let Some(d) = &svg {
                    fs::write(d.join(format!("{}.svg", t.id())), render_svg(&colorize(&p, t)?, 400))?;
                }
            }
            if !sigma.is_empty() {
                println!("\nsigma_w   mean feasibility");
                for pt in sigma_sweep(&fdm, &idm, &trajs, &sigma)? {
                    println!("{:<9} {:.4}", pt.sigma_w, pt.mean_feasibility);
                }
            }
        }
        Command::TrainPolicy { variant, session, dynamics, out } => {
            let (idm, fdm) = load_dynamics(&dynamics)?;
            let s = DemoSession::load_dir(&session)?;
            if s.feedback_enabled != variant.uses_feedback_demos() {
                eprintln!(
                    "warning: {} expects demonstrations {} feedback, but {} was recorded {} it",
                    variant.name(),
                    if variant.uses_feedback_demos() { "with" } else { "without" },
                    session.display(),
                    if s.feedback_enabled { "with" } else { "without" }
                );
            }
            let set = build_weighted_set(&s.trajectories(), &idm, &fdm, cfg.sigma_w, variant.weighted())?;
            let mut pcfg = cfg.policy.clone();
            pcfg.train.seed = derive_seed(cfg.seed, "policy");
            let t = train_policy(&set, &pcfg, variant)?;
            if let Some(parent) = out.parent() {
                fs::create_dir_all(parent)?;
            }
            t.model.save(&out)?;
            println!(
                "{}: {} records, best validation loss {:.5} at epoch {}; saved to {}",
                variant.name(),
                set.len(),
                t.outcome.best_val_loss,
                t.outcome.best_epoch,
                out.display()
            );
        }
        Command::Evaluate { policy, out } => {
            let controller: Box<dyn Controller<f64>> = match policy.as_str() {
                "scripted" => Box::new(ScriptedInsertion {
                    limits: cfg.limits,
                    dt: cfg.dt,
                    hover_height: cfg.demonstrator.hover_height,
                }),
                "zero" => Box::new(ZeroPolicy),
                path => Box::new(PolicyModel::<f64>::load(Path::new(path))?),
            };
            let mut e = evaluate_policy(controller.as_ref(), &cfg.eval_config())?;
            if let Ok(m) = PolicyModel::<f64>::load(Path::new(&policy)) {
                e.variant = Some(m.variant());
            }
            if let Some(o) = out {
                fs::write(&o, serde_json::to_string_pretty(&e)?)?;
            }
            println!("{policy}: {}", e.summary());
        }
        Command::Ablation { out, json } => {
            let cfg = ExperimentConfig { output_dir: out, ..cfg };
            let report = run_with_progress(&cfg, &mut |stage, f| eprintln!("[{:>3.0}%] {stage}", 100.0 * f))?;
            if json {
                println!("{}", report.to_json()?);
            } else {
                print!("{}", report.table());
            }
        }
        Command::Serve { bind, data_dir, stream_interval_ms } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let state = AppState::open(ServiceConfig {
                    data_dir,
                    experiment: cfg,
                    stream_interval: Duration::from_millis(stream_interval_ms),
                })
                .map_err(|e| anyhow!(e.message))?;
                let listener = tokio::net::TcpListener::bind(&bind).await.with_context(|| format!("binding {bind}"))?;
                println!("serving on http://{}", listener.local_addr()?);
                fabco_service::serve(listener, state).await?;
                Ok::<_, anyhow::Error>(())
            })?;
        }
    }
    Ok(())
}
