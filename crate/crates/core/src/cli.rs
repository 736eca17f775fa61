//! Command-line driver: training, evaluation, and the experiment battery.
//!
//! Every subcommand writes into one run directory (default `runs/<command>`)
//! with a fixed layout: `config.txt` (settings echo), `manifest.txt`
//! (invocation record with content hashes), experiment CSVs, `ckpt-*.bin`
//! checkpoints, and `plots/*.svg`. Figures are rendered by re-parsing the
//! CSVs — never from live state — so any plot can be rebuilt from the data
//! alone. `--deterministic` zeroes wall-clock columns so a repeated run
//! produces byte-identical CSVs.
//!
//! Exit codes: 0 success, 2 configuration error (bad flags, unreadable
//! files, dimension mismatches), 3 runtime failure (training divergence,
//! violated invariants, failed dynamics checks).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::centroidal::{momentum_brute_force, CommandVel};
use crate::config::{ConfigError, DisturbanceEvent, EnvConfig};
use crate::env::{LocoMarl, LocomotionEnv, StepResult};
use crate::marl::{
    evaluate, Architecture, IterMetrics, MarlObs, PolicyBundle, PpoConfig, Trainer,
};
use crate::model::{load_model, mini_humanoid, mini_humanoid_text, RobotModel};
use crate::plot::{self, Band, Cell, Series, Violin};
use crate::sim::Stance;
use crate::toy::{coop_ppo_config, CoopCartArm, COOP_COMPARE_ITERS};
use crate::validate;

#[derive(Parser)]
#[command(
    name = "limbrl",
    version,
    about = "Limb-level multi-agent RL for humanoid locomotion"
)]
struct Cli {
    /// Environment settings file (`key = value` lines); built-in defaults
    /// otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Robot description file; the bundled mini humanoid otherwise.
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Master seed for everything stochastic.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Run directory (default `runs/<command>`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Zero wall-clock columns so repeated runs emit byte-identical CSVs.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Worker threads for grid experiments (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train limb agents on the humanoid locomotion task.
    Train {
        /// single, dtde, ctde, or ctce.
        #[arg(long, default_value = "ctde")]
        arch: Architecture,
        #[arg(long, default_value_t = 200)]
        iters: usize,
        /// Also save `ckpt-<iter>.bin` every N iterations (0 = final only).
        #[arg(long, default_value_t = 0)]
        checkpoint_every: usize,
    },
    /// Run deterministic evaluation episodes from a checkpoint.
    Eval {
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: u64,
    },
    /// Log the angular-momentum decomposition along one rollout.
    CamTrace {
        checkpoint: PathBuf,
        /// Rollout length (s).
        #[arg(long, default_value_t = 5.0)]
        duration: f64,
        /// Fixed command "vx,vy,wz" (m/s, m/s, rad/s).
        #[arg(long, default_value = "0.6,0.0,0.0", value_parser = parse_command)]
        command: CommandVel,
    },
    /// Ground-reaction yaw-moment distribution over walking steps.
    GrmDist {
        /// One or more checkpoints to compare.
        #[arg(required = true)]
        checkpoints: Vec<PathBuf>,
        /// Walking steps to collect per policy.
        #[arg(long, default_value_t = 10)]
        steps: usize,
        /// Fixed command "vx,vy,wz" (m/s, m/s, rad/s).
        #[arg(long, default_value = "0.6,0.0,0.0", value_parser = parse_command)]
        command: CommandVel,
    },
    /// Recovery-success grid over base torque pushes.
    PushGrid {
        #[arg(required = true)]
        checkpoints: Vec<PathBuf>,
        /// Cells per axis (odd counts include the zero-push cell).
        #[arg(long, default_value_t = 7)]
        resolution: usize,
        /// Grid spans [-magnitude, magnitude]² N·m.
        #[arg(long, default_value_t = 15.0)]
        magnitude: f64,
    },
    /// Train all four architectures on the toy task and compare them.
    ArchCompare {
        #[arg(long, default_value_t = COOP_COMPARE_ITERS)]
        iters: usize,
        /// Comma-separated seed list.
        #[arg(long, value_delimiter = ',', default_values_t = 1u64..=10)]
        seeds: Vec<u64>,
    },
    /// Train one architecture on the bundled two-agent toy task.
    ToyCoop {
        /// single, dtde, ctde, or ctce.
        #[arg(long, default_value = "ctde")]
        arch: Architecture,
        #[arg(long, default_value_t = COOP_COMPARE_ITERS)]
        iters: usize,
    },
    /// Run the rigid-body dynamics cross-check suite.
    ValidateDynamics,
}

fn parse_command(s: &str) -> Result<CommandVel, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected vx,vy,wz, got '{s}'"));
    }
    let mut v = [0.0; 3];
    for (slot, part) in v.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|e| format!("bad number '{part}': {e}"))?;
    }
    Ok(CommandVel::new(v[0], v[1], v[2]))
}

/// Failures split by who must fix them: `Config` is the caller's input,
/// `Runtime` is the run itself going wrong.
#[derive(Debug)]
enum CliError {
    Config(String),
    Runtime(String),
}

type CliResult<T> = Result<T, CliError>;

fn config_err<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Config(msg.into()))
}

fn runtime_err<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Runtime(msg.into()))
}

pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(CliError::Config(m)) => {
            eprintln!("config error: {m}");
            2
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("runtime failure: {m}");
            3
        }
    }
}

/// Shared invocation state: resolved settings, robot, and the run directory.
struct Ctx {
    env_cfg: EnvConfig,
    config_label: String,
    model: Arc<RobotModel>,
    model_label: String,
    model_sha: String,
    seed: u64,
    deterministic: bool,
    dir: PathBuf,
    invocation: String,
}

impl Ctx {
    fn file(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn plot(&self, name: &str) -> PathBuf {
        self.dir.join("plots").join(name)
    }

    fn base_manifest(&self, command: &str) -> Vec<(&'static str, String)> {
        vec![
            ("command", command.to_string()),
            ("invocation", self.invocation.clone()),
            ("seed", self.seed.to_string()),
            ("deterministic", self.deterministic.to_string()),
            ("config", self.config_label.clone()),
            ("model", self.model_label.clone()),
            ("model_sha256", self.model_sha.clone()),
        ]
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        // A second build_global in the same process is a no-op; that is fine.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let name = match &cli.cmd {
        Cmd::Train { arch, .. } => format!("train-{arch}"),
        Cmd::Eval { .. } => "eval".to_string(),
        Cmd::CamTrace { .. } => "cam-trace".to_string(),
        Cmd::GrmDist { .. } => "grm-dist".to_string(),
        Cmd::PushGrid { .. } => "push-grid".to_string(),
        Cmd::ArchCompare { .. } => "arch-compare".to_string(),
        Cmd::ToyCoop { arch, .. } => format!("toy-coop-{arch}"),
        Cmd::ValidateDynamics => "validate".to_string(),
    };
    let dir = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(name));
    fs::create_dir_all(dir.join("plots"))
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;

    let (env_cfg, config_label) = load_env_config(&cli.config)?;
    let (model, model_label, model_text) = load_robot(&cli.model, &env_cfg)?;
    let ctx = Ctx {
        env_cfg,
        config_label,
        model,
        model_label,
        model_sha: sha256_hex(model_text.as_bytes()),
        seed: cli.seed,
        deterministic: cli.deterministic,
        dir,
        invocation: std::env::args().skip(1).collect::<Vec<_>>().join(" "),
    };

    match cli.cmd {
        Cmd::Train {
            arch,
            iters,
            checkpoint_every,
        } => cmd_train(&ctx, arch, iters, checkpoint_every),
        Cmd::Eval {
            checkpoint,
            episodes,
        } => cmd_eval(&ctx, &checkpoint, episodes),
        Cmd::CamTrace {
            checkpoint,
            duration,
            command,
        } => cmd_cam_trace(&ctx, &checkpoint, duration, command),
        Cmd::GrmDist {
            checkpoints,
            steps,
            command,
        } => cmd_grm_dist(&ctx, &checkpoints, steps, command),
        Cmd::PushGrid {
            checkpoints,
            resolution,
            magnitude,
        } => cmd_push_grid(&ctx, &checkpoints, resolution, magnitude),
        Cmd::ArchCompare { iters, seeds } => cmd_arch_compare(&ctx, iters, &seeds),
        Cmd::ToyCoop { arch, iters } => cmd_toy_coop(&ctx, arch, iters),
        Cmd::ValidateDynamics => cmd_validate_dynamics(&ctx),
    }
}

// ---------------------------------------------------------------- loading

fn load_env_config(path: &Option<PathBuf>) -> CliResult<(EnvConfig, String)> {
    match path {
        None => Ok((EnvConfig::default(), "defaults".to_string())),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            let cfg = EnvConfig::parse(&text).map_err(|e: ConfigError| {
                CliError::Config(format!("{}: {e}", p.display()))
            })?;
            Ok((cfg, p.display().to_string()))
        }
    }
}

fn load_robot(
    flag: &Option<PathBuf>,
    cfg: &EnvConfig,
) -> CliResult<(Arc<RobotModel>, String, String)> {
    let path = flag.clone().or_else(|| cfg.model_path.clone());
    match path {
        None => Ok((
            Arc::new(mini_humanoid().clone()),
            "bundled mini humanoid".to_string(),
            mini_humanoid_text().to_string(),
        )),
        Some(p) => {
            let text = fs::read_to_string(&p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            let model = load_model(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            Ok((Arc::new(model), p.display().to_string(), text))
        }
    }
}

fn load_bundle(path: &Path) -> CliResult<PolicyBundle> {
    PolicyBundle::load(path).map_err(|e| {
        CliError::Config(format!("cannot load checkpoint {}: {e}", path.display()))
    })
}

/// Rejects a checkpoint whose network shapes cannot act on this robot,
/// quoting both sides' dimensions.
fn check_compat(bundle: &PolicyBundle, env: &LocomotionEnv) -> CliResult<()> {
    let env_actions = vec![env.arm_spec.action_dim, env.leg_spec.action_dim];
    let local = [env.arm_spec.layout.dim(), env.leg_spec.layout.dim()];
    let global = env.global_layout.dim();
    let expect_inputs: Vec<usize> = if bundle.arch.actor_global() {
        vec![global; bundle.agents.len()]
    } else {
        local.to_vec()
    };
    let got_inputs: Vec<usize> = bundle
        .agents
        .iter()
        .map(|a| a.policy.mean_net.input_dim())
        .collect();
    if bundle.action_dims != env_actions || got_inputs != expect_inputs {
        return config_err(format!(
            "checkpoint does not fit this robot: checkpoint has action dims {:?} and actor \
             input dims {:?}; the {} architecture on this model needs action dims {:?} and \
             actor input dims {:?}",
            bundle.action_dims, got_inputs, bundle.arch, env_actions, expect_inputs
        ));
    }
    Ok(())
}

// ------------------------------------------------------------- small utils

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        let _ = write!(s, "{b:02x}");
    }
    s
}

fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Runtime(format!("cannot hash {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

fn write_file(path: &Path, content: &str) -> CliResult<()> {
    fs::write(path, content)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn write_manifest(ctx: &Ctx, entries: Vec<(&'static str, String)>) -> CliResult<()> {
    let mut s = String::new();
    for (k, v) in entries {
        let _ = writeln!(s, "{k} = {v}");
    }
    write_file(&ctx.file("manifest.txt"), &s)
}

fn write_csv(path: &Path, header: &str, rows: &[String]) -> CliResult<()> {
    let mut s = String::with_capacity(header.len() + rows.iter().map(|r| r.len() + 1).sum::<usize>());
    s.push_str(header);
    s.push('\n');
    for r in rows {
        s.push_str(r);
        s.push('\n');
    }
    write_file(path, &s)
}

/// Splits a CSV written by this module back into header names and row cells.
fn read_csv(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = match lines.next() {
        Some(h) => h.split(',').map(|s| s.to_string()).collect(),
        None => return runtime_err(format!("{} is empty", path.display())),
    };
    let rows = lines
        .map(|l| l.split(',').map(|s| s.to_string()).collect())
        .collect();
    Ok((header, rows))
}

fn col(header: &[String], name: &str) -> CliResult<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::Runtime(format!("missing CSV column {name}")))
}

fn fval(cell: &str) -> f64 {
    cell.parse().unwrap_or(f64::NAN)
}

fn fmt6(x: f64) -> String {
    format!("{x:.6}")
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    plot::percentile(&v, 0.5)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
    (mean, var.sqrt())
}

fn marl_obs(r: &StepResult) -> MarlObs {
    MarlObs {
        local: vec![r.arm_obs.clone(), r.leg_obs.clone()],
        global: r.global_obs.clone(),
    }
}

/// Learner-group labels: one joint group or one label per limb agent.
fn group_labels(arch: Architecture, agents: &[&str]) -> Vec<String> {
    if arch.joint() {
        vec!["joint".to_string()]
    } else {
        agents.iter().map(|s| s.to_string()).collect()
    }
}

/// Pins the command distribution to one fixed command so every reset uses it.
fn pin_command(cfg: &mut EnvConfig, cmd: CommandVel) {
    cfg.vx_range = (cmd.vx, cmd.vx);
    cfg.vy_range = (cmd.vy, cmd.vy);
    cfg.wz_range = (cmd.wz, cmd.wz);
    cfg.zero_command_prob = if cmd.is_zero() { 1.0 } else { 0.0 };
}

fn ppo_text(cfg: &PpoConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "gamma = {}", cfg.gamma);
    let _ = writeln!(s, "lam = {}", cfg.lam);
    let _ = writeln!(s, "clip = {}", cfg.clip);
    let _ = writeln!(s, "lr = {}", cfg.lr);
    let _ = writeln!(s, "value_lr = {}", cfg.value_lr);
    let _ = writeln!(s, "epochs = {}", cfg.epochs);
    let _ = writeln!(s, "minibatches = {}", cfg.minibatches);
    let _ = writeln!(s, "entropy_coef = {}", cfg.entropy_coef);
    let _ = writeln!(s, "max_grad_norm = {}", cfg.max_grad_norm);
    let _ = writeln!(s, "kl_limit = {}", cfg.kl_limit);
    let _ = writeln!(s, "horizon = {}", cfg.horizon);
    let _ = writeln!(s, "num_envs = {}", cfg.num_envs);
    let _ = writeln!(
        s,
        "hidden = {}",
        cfg.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join("x")
    );
    let _ = writeln!(s, "init_log_std = {}", cfg.init_log_std);
    s
}

/// Distinct short labels for checkpoint paths: file stems, deduplicated.
fn policy_labels(paths: &[PathBuf]) -> Vec<String> {
    let mut labels: Vec<String> = Vec::with_capacity(paths.len());
    for p in paths {
        let stem = p
            .file_stem()
            .map(|s| s.to_string_lossy().replace(',', "-"))
            .unwrap_or_else(|| "policy".to_string());
        let mut label = stem.clone();
        let mut n = 2;
        while labels.contains(&label) {
            label = format!("{stem}-{n}");
            n += 1;
        }
        labels.push(label);
    }
    labels
}

// ------------------------------------------------------------------ train

/// Per-group metric columns shared by the humanoid and toy training CSVs.
fn group_header(labels: &[String]) -> String {
    labels
        .iter()
        .map(|g| {
            format!(
                "{g}_reward_mean,{g}_adv_variance,{g}_ret_variance,\
                 {g}_policy_loss,{g}_value_loss,{g}_kl,{g}_entropy"
            )
        })
        .collect::<Vec<_>>()
        .join(",")
}

fn group_cells(m: &IterMetrics) -> String {
    m.agents
        .iter()
        .map(|a| {
            [
                a.mean_reward,
                a.adv_variance,
                a.ret_variance,
                a.policy_loss,
                a.value_loss,
                a.kl,
                a.entropy,
            ]
            .map(fmt6)
            .join(",")
        })
        .collect::<Vec<_>>()
        .join(",")
}

fn cmd_train(ctx: &Ctx, arch: Architecture, iters: usize, checkpoint_every: usize) -> CliResult<()> {
    if iters == 0 {
        return config_err("--iters must be at least 1");
    }
    let ppo = PpoConfig::default();
    let envs: Vec<LocoMarl> = (0..ppo.num_envs)
        .map(|_| LocoMarl::new(LocomotionEnv::new(ctx.model.clone(), ctx.env_cfg.clone())))
        .collect();
    let labels = group_labels(arch, &["arm", "leg"]);
    let mut trainer = Trainer::new(envs, arch, ppo.clone(), ctx.seed);

    let comp_names = ["task", "shaping", "action_rate", "joint_vel", "torque", "joint_limit"];
    let comp_header = ["arm", "leg"]
        .iter()
        .flat_map(|a| comp_names.iter().map(move |c| format!("{a}_{c}")))
        .collect::<Vec<_>>()
        .join(",");
    let header = format!(
        "iteration,wall_clock_s,r_vt_mean,episode_len_steps,{comp_header},{}",
        group_header(&labels)
    );

    let mut rows = Vec::with_capacity(iters);
    let t0 = Instant::now();
    let progress_every = (iters / 10).max(1);
    for i in 0..iters {
        let m = trainer
            .iterate()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        let comps = drain_components(trainer.envs_mut());
        let wall = if ctx.deterministic { 0.0 } else { t0.elapsed().as_secs_f64() };
        let comp_cells = comps
            .iter()
            .flat_map(|t| {
                [t.task, t.shaping, t.action_rate, t.joint_vel, t.torque, t.joint_limit]
                    .map(fmt6)
            })
            .collect::<Vec<_>>()
            .join(",");
        rows.push(format!(
            "{},{},{},{},{comp_cells},{}",
            m.iteration,
            fmt6(wall),
            fmt6(m.tracking_mean),
            fmt6(m.episode_len_mean),
            group_cells(&m)
        ));
        if (i + 1) % progress_every == 0 || i + 1 == iters {
            println!(
                "[train {arch}] iter {}/{iters}  r_vt {:.3}  len {:.0}",
                i + 1,
                m.tracking_mean,
                m.episode_len_mean
            );
        }
        if checkpoint_every > 0 && (i + 1) % checkpoint_every == 0 && i + 1 != iters {
            trainer
                .save(&ctx.file(&format!("ckpt-{:05}.bin", i + 1)))
                .map_err(|e| CliError::Runtime(e.to_string()))?;
        }
    }
    let ckpt = ctx.file("ckpt-final.bin");
    trainer
        .save(&ckpt)
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    let csv = ctx.file("metrics.csv");
    write_csv(&csv, &header, &rows)?;
    write_file(
        &ctx.file("config.txt"),
        &format!("{}\n# ppo\n{}", ctx.env_cfg.to_text(), ppo_text(&ppo)),
    )?;
    training_plots(ctx, &csv, &labels)?;

    let mut manifest = ctx.base_manifest("train");
    manifest.push(("arch", arch.to_string()));
    manifest.push(("iterations", iters.to_string()));
    manifest.push(("checkpoint", "ckpt-final.bin".to_string()));
    manifest.push(("checkpoint_sha256", sha256_file(&ckpt)?));
    write_manifest(ctx, manifest)?;
    println!("artifacts in {}", ctx.dir.display());
    Ok(())
}

/// Step-weighted mean reward components per limb agent across all envs.
fn drain_components(envs: &mut [LocoMarl]) -> [crate::env::RewardTerms; 2] {
    let mut sums = [crate::env::RewardTerms::default(); 2];
    let mut steps = 0usize;
    for e in envs {
        let (means, n) = e.drain_reward_components();
        sums[0] += means[0].scale(n as f64);
        sums[1] += means[1].scale(n as f64);
        steps += n;
    }
    let k = if steps == 0 { 0.0 } else { 1.0 / steps as f64 };
    [sums[0].scale(k), sums[1].scale(k)]
}

/// Tracking and advantage-variance charts, re-parsed from the metrics CSV.
fn training_plots(ctx: &Ctx, csv: &Path, labels: &[String]) -> CliResult<()> {
    let (header, rows) = read_csv(csv)?;
    let it = col(&header, "iteration")?;
    let tracking_col = header
        .iter()
        .position(|h| h == "r_vt_mean" || h == "tracking_mean")
        .ok_or_else(|| CliError::Runtime("missing tracking column".to_string()))?;
    let series = |c: usize, name: &str| Series {
        name: name.to_string(),
        points: rows.iter().map(|r| (fval(&r[it]), fval(&r[c]))).collect(),
    };
    let mut tracking = vec![series(tracking_col, "tracking")];
    let mut adv = Vec::new();
    for g in labels {
        tracking.push(series(col(&header, &format!("{g}_reward_mean"))?, &format!("{g} reward")));
        adv.push(series(col(&header, &format!("{g}_adv_variance"))?, &format!("{g} adv variance")));
    }
    write_file(
        &ctx.plot("tracking.svg"),
        &plot::line_plot("training progress", "iteration", "per-step mean", &tracking),
    )?;
    write_file(
        &ctx.plot("adv_variance.svg"),
        &plot::line_plot("advantage variance", "iteration", "variance", &adv),
    )?;
    Ok(())
}

// ------------------------------------------------------------------- eval

fn cmd_eval(ctx: &Ctx, checkpoint: &Path, episodes: u64) -> CliResult<()> {
    if episodes == 0 {
        return config_err("--episodes must be at least 1");
    }
    let bundle = load_bundle(checkpoint)?;
    let env = LocomotionEnv::new(ctx.model.clone(), ctx.env_cfg.clone());
    check_compat(&bundle, &env)?;
    let mut marl = LocoMarl::new(env);
    let stats = evaluate(&bundle, &mut marl, episodes, ctx.seed);
    if !stats.mean_return.is_finite() {
        return runtime_err("evaluation produced a non-finite return");
    }
    write_csv(
        &ctx.file("eval.csv"),
        "episodes,mean_return,mean_tracking,mean_len_steps",
        &[format!(
            "{episodes},{},{},{}",
            fmt6(stats.mean_return),
            fmt6(stats.mean_tracking),
            fmt6(stats.mean_len)
        )],
    )?;
    write_file(&ctx.file("config.txt"), &ctx.env_cfg.to_text())?;
    let mut manifest = ctx.base_manifest("eval");
    manifest.push(("checkpoint", checkpoint.display().to_string()));
    manifest.push(("checkpoint_sha256", sha256_file(checkpoint)?));
    manifest.push(("episodes", episodes.to_string()));
    write_manifest(ctx, manifest)?;
    println!(
        "eval over {episodes} episodes: return {:.3}  tracking {:.3}  len {:.1} steps",
        stats.mean_return, stats.mean_tracking, stats.mean_len
    );
    println!("artifacts in {}", ctx.dir.display());
    Ok(())
}

// -------------------------------------------------------------- cam-trace

fn cmd_cam_trace(ctx: &Ctx, checkpoint: &Path, duration: f64, command: CommandVel) -> CliResult<()> {
    if !(duration > 0.0) {
        return config_err("--duration must be positive");
    }
    let bundle = load_bundle(checkpoint)?;
    let mut cfg = ctx.env_cfg.clone();
    pin_command(&mut cfg, command);
    cfg.episode_s = duration;
    let mut env = LocomotionEnv::new(ctx.model.clone(), cfg.clone());
    check_compat(&bundle, &env)?;

    let header = "time_s,kz_total_kgm2_per_s,kz_base_kgm2_per_s,kz_legs_kgm2_per_s,\
                  kz_arms_kgm2_per_s,kz_ref_kgm2_per_s,decomposition_err_kgm2_per_s";
    let mut rows = Vec::new();
    let mut max_err: f64 = 0.0;
    let mut record = |env: &LocomotionEnv, r: &StepResult, max_err: &mut f64| {
        let base = r.cq.parts.base.moment.z;
        let legs = r.cq.parts.legs.moment.z;
        let arms = r.cq.parts.arms.moment.z;
        // Independent total: momentum summed directly over bodies, not
        // through the momentum-matrix columns the parts came from.
        let total = momentum_brute_force(env.model(), &env.state().gen).moment.z;
        let err = (total - (base + legs + arms)).abs();
        *max_err = max_err.max(err);
        rows.push(format!(
            "{},{},{},{},{},{},{:.3e}",
            fmt6(env.episode_time()),
            fmt6(total),
            fmt6(base),
            fmt6(legs),
            fmt6(arms),
            fmt6(r.cq.h_ref.moment.z),
            err
        ));
    };

    let r = env.reset(ctx.seed);
    let mut obs = marl_obs(&r);
    record(&env, &r, &mut max_err);
    loop {
        let actions = bundle.act(&obs);
        let r = env.act(&actions[0], &actions[1]);
        record(&env, &r, &mut max_err);
        if r.terminated || r.truncated {
            break;
        }
        obs = marl_obs(&r);
    }
    if max_err > 1e-9 {
        return runtime_err(format!(
            "momentum decomposition no longer sums to the body-wise total (max error {max_err:.3e})"
        ));
    }

    let csv = ctx.file("cam_trace.csv");
    write_csv(&csv, header, &rows)?;
    write_file(&ctx.file("config.txt"), &cfg.to_text())?;

    let (h, data) = read_csv(&csv)?;
    let t = col(&h, "time_s")?;
    let names = [
        ("kz_total_kgm2_per_s", "total"),
        ("kz_base_kgm2_per_s", "base"),
        ("kz_legs_kgm2_per_s", "legs"),
        ("kz_arms_kgm2_per_s", "arms"),
        ("kz_ref_kgm2_per_s", "reference"),
    ];
    let mut series = Vec::new();
    for (c, label) in names {
        let idx = col(&h, c)?;
        series.push(Series {
            name: label.to_string(),
            points: data.iter().map(|r| (fval(&r[t]), fval(&r[idx]))).collect(),
        });
    }
    write_file(
        &ctx.plot("cam_trace.svg"),
        &plot::line_plot(
            "vertical angular momentum about the COM",
            "time (s)",
            "kz (kg m^2/s)",
            &series,
        ),
    )?;

    let mut manifest = ctx.base_manifest("cam-trace");
    manifest.push(("checkpoint", checkpoint.display().to_string()));
    manifest.push(("checkpoint_sha256", sha256_file(checkpoint)?));
    manifest.push(("command", format!("{},{},{}", command.vx, command.vy, command.wz)));
    manifest.push(("duration_s", duration.to_string()));
    manifest.push(("steps_logged", rows.len().to_string()));
    manifest.push(("max_decomposition_err", format!("{max_err:.3e}")));
    write_manifest(ctx, manifest)?;
    println!(
        "logged {} steps, max decomposition error {max_err:.3e}",
        rows.len()
    );
    println!("artifacts in {}", ctx.dir.display());
    Ok(())
}

// --------------------------------------------------------------- grm-dist

fn cmd_grm_dist(
    ctx: &Ctx,
    checkpoints: &[PathBuf],
    steps: usize,
    command: CommandVel,
) -> CliResult<()> {
    if steps == 0 {
        return config_err("--steps must be at least 1");
    }
    let labels = policy_labels(checkpoints);
    let mut cfg = ctx.env_cfg.clone();
    pin_command(&mut cfg, command);
    // Room for the requested step count at the gait cadence, plus margin.
    let need = steps as f64 * cfg.gait_period;
    cfg.episode_s = cfg.episode_s.max(need * 2.0 + 2.0);

    let mut sample_rows = Vec::new();
    let mut summary_rows = Vec::new();
    let mut flags = Vec::new();
    for (path, label) in checkpoints.iter().zip(&labels) {
        let bundle = load_bundle(path)?;
        let mut env = LocomotionEnv::new(ctx.model.clone(), cfg.clone());
        check_compat(&bundle, &env)?;

        let mut mz = Vec::new();
        let mut walking_steps = 0usize;
        let mut last_side: Option<Stance> = None;
        let r = env.reset(ctx.seed);
        let mut obs = marl_obs(&r);
        loop {
            let actions = bundle.act(&obs);
            let r = env.act(&actions[0], &actions[1]);
            if matches!(r.grm.stance, Stance::Left | Stance::Right) && !r.terminated {
                if last_side != Some(r.grm.stance) {
                    walking_steps += 1;
                    last_side = Some(r.grm.stance);
                }
                if walking_steps > steps {
                    break;
                }
                mz.push(r.grm.mz);
                sample_rows.push(format!(
                    "{label},{walking_steps},{},{},{}",
                    fmt6(env.episode_time()),
                    fmt6(r.grm.mz),
                    r.grm.stance.label()
                ));
            }
            if r.terminated || r.truncated {
                break;
            }
            obs = marl_obs(&r);
        }

        let completed = walking_steps.min(steps);
        let partial = completed < steps;
        let mut sorted = mz.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (p5, p50, p95) = (
            plot::percentile(&sorted, 0.05),
            plot::percentile(&sorted, 0.5),
            plot::percentile(&sorted, 0.95),
        );
        if !sorted.is_empty() && !(p5 <= p50 && p50 <= p95) {
            return runtime_err(format!("percentiles out of order for {label}: {p5} {p50} {p95}"));
        }
        let peak = sorted.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        summary_rows.push(format!(
            "{label},{},{completed},{steps},{},{},{},{},{}",
            mz.len(),
            partial as u8,
            fmt6(p5),
            fmt6(p50),
            fmt6(p95),
            fmt6(peak)
        ));
        if mz.is_empty() {
            flags.push(format!("{label}: no walking steps — empty distribution"));
        } else if partial {
            flags.push(format!(
                "{label}: partial data — episode ended after {completed} of {steps} steps"
            ));
        }
        println!(
            "[grm {label}] steps {completed}/{steps}  samples {}  p50 {:.3} N·m  peak {:.3} N·m{}",
            mz.len(),
            p50,
            peak,
            if partial { "  (partial)" } else { "" }
        );
    }

    let samples_csv = ctx.file("grm_samples.csv");
    write_csv(
        &samples_csv,
        "policy,walking_step,time_s,mz_Nm,stance",
        &sample_rows,
    )?;
    write_csv(
        &ctx.file("grm_summary.csv"),
        "policy,samples,steps_completed,steps_requested,partial,p5_mz_Nm,p50_mz_Nm,p95_mz_Nm,peak_abs_mz_Nm",
        &summary_rows,
    )?;
    write_file(&ctx.file("config.txt"), &cfg.to_text())?;

    let (h, data) = read_csv(&samples_csv)?;
    let pc = col(&h, "policy")?;
    let mc = col(&h, "mz_Nm")?;
    let violins: Vec<Violin> = labels
        .iter()
        .map(|label| Violin {
            name: label.clone(),
            samples: data
                .iter()
                .filter(|r| &r[pc] == label)
                .map(|r| fval(&r[mc]))
                .collect(),
        })
        .collect();
    write_file(
        &ctx.plot("grm_violin.svg"),
        &plot::violin_plot("ground-reaction yaw moment during single stance", "mz (N·m)", &violins),
    )?;

    let mut manifest = ctx.base_manifest("grm-dist");
    for (path, label) in checkpoints.iter().zip(&labels) {
        manifest.push(("checkpoint", format!("{label} = {}", path.display())));
        manifest.push(("checkpoint_sha256", sha256_file(path)?));
    }
    manifest.push(("steps_requested", steps.to_string()));
    manifest.push(("command", format!("{},{},{}", command.vx, command.vy, command.wz)));
    for f in &flags {
        manifest.push(("flag", f.clone()));
    }
    write_manifest(ctx, manifest)?;
    println!("artifacts in {}", ctx.dir.display());
    Ok(())
}

// -------------------------------------------------------------- push-grid

fn cmd_push_grid(
    ctx: &Ctx,
    checkpoints: &[PathBuf],
    resolution: usize,
    magnitude: f64,
) -> CliResult<()> {
    if resolution == 0 {
        return config_err("--resolution must be at least 1");
    }
    if !(magnitude >= 0.0) {
        return config_err("--magnitude must be non-negative");
    }
    let labels = policy_labels(checkpoints);
    let taus: Vec<f64> = if resolution == 1 {
        vec![0.0]
    } else {
        (0..resolution)
            .map(|i| -magnitude + 2.0 * magnitude * i as f64 / (resolution - 1) as f64)
            .collect()
    };
    let cells: Vec<(f64, f64)> = taus
        .iter()
        .flat_map(|&ty| taus.iter().map(move |&tx| (tx, ty)))
        .collect();

    const PUSH_T: f64 = 1.0;
    const PUSH_LEN: f64 = 0.1;
    const HOLD: f64 = 4.0;
    let until = PUSH_T + PUSH_LEN + HOLD;

    let mut base_cfg = ctx.env_cfg.clone();
    pin_command(&mut base_cfg, CommandVel::default());
    base_cfg.episode_s = until + 0.5;

    let mut rows = Vec::new();
    let mut summary_rows = Vec::new();
    for (path, label) in checkpoints.iter().zip(&labels) {
        let bundle = load_bundle(path)?;
        check_compat(&bundle, &LocomotionEnv::new(ctx.model.clone(), base_cfg.clone()))?;

        // Cells are independent rollouts; run them across the thread pool.
        let results: Vec<(f64, f64, bool, f64)> = cells
            .par_iter()
            .map(|&(tx, ty)| {
                let mut cfg = base_cfg.clone();
                cfg.disturbances = vec![DisturbanceEvent {
                    time: PUSH_T,
                    torque: [tx, ty, 0.0],
                    duration: PUSH_LEN,
                }];
                let mut env = LocomotionEnv::new(ctx.model.clone(), cfg);
                let r = env.reset(ctx.seed);
                let mut obs = marl_obs(&r);
                let mut survived;
                let mut ok = true;
                loop {
                    let actions = bundle.act(&obs);
                    let r = env.act(&actions[0], &actions[1]);
                    survived = env.episode_time();
                    if r.terminated {
                        ok = false;
                        break;
                    }
                    if survived >= until || r.truncated {
                        break;
                    }
                    obs = marl_obs(&r);
                }
                (tx, ty, ok && survived >= until, survived.min(until))
            })
            .collect();

        let successes = results.iter().filter(|r| r.2).count();
        let zero_cell = results
            .iter()
            .find(|r| r.0 == 0.0 && r.1 == 0.0)
            .map(|r| r.2);
        for (tx, ty, ok, survived) in &results {
            rows.push(format!(
                "{label},{},{},{},{}",
                fmt6(*tx),
                fmt6(*ty),
                *ok as u8,
                fmt6(*survived)
            ));
        }
        summary_rows.push(format!(
            "{label},{},{successes},{},{}",
            results.len(),
            fmt6(successes as f64 / results.len() as f64),
            match zero_cell {
                Some(ok) => (ok as u8).to_string(),
                None => "absent".to_string(),
            }
        ));
        println!(
            "[push {label}] {successes}/{} cells recovered (area ratio {:.3}){}",
            results.len(),
            successes as f64 / results.len() as f64,
            match zero_cell {
                Some(true) => "",
                Some(false) => "  WARNING: zero-push cell failed",
                None => "  (no zero cell in grid)",
            }
        );
    }

    let csv = ctx.file("push_grid.csv");
    write_csv(&csv, "policy,torque_x_Nm,torque_y_Nm,success,survived_s", &rows)?;
    write_csv(
        &ctx.file("push_summary.csv"),
        "policy,cells,successes,success_area_ratio,zero_cell_success",
        &summary_rows,
    )?;
    write_file(&ctx.file("config.txt"), &base_cfg.to_text())?;

    let (h, data) = read_csv(&csv)?;
    let (pc, xc, yc, sc) = (
        col(&h, "policy")?,
        col(&h, "torque_x_Nm")?,
        col(&h, "torque_y_Nm")?,
        col(&h, "success")?,
    );
    for label in &labels {
        let cells: Vec<Cell> = data
            .iter()
            .filter(|r| &r[pc] == label)
            .map(|r| Cell {
                x: fval(&r[xc]),
                y: fval(&r[yc]),
                value: fval(&r[sc]),
            })
            .collect();
        write_file(
            &ctx.plot(&format!("push_grid_{label}.svg")),
            &plot::region_plot(
                &format!("push recovery — {label}"),
                "torque x (N·m)",
                "torque y (N·m)",
                &cells,
            ),
        )?;
    }

    let mut manifest = ctx.base_manifest("push-grid");
    for (path, label) in checkpoints.iter().zip(&labels) {
        manifest.push(("checkpoint", format!("{label} = {}", path.display())));
        manifest.push(("checkpoint_sha256", sha256_file(path)?));
    }
    manifest.push(("resolution", resolution.to_string()));
    manifest.push(("magnitude_Nm", magnitude.to_string()));
    manifest.push((
        "push",
        format!("torque at t={PUSH_T}s for {PUSH_LEN}s, success = upright {HOLD}s after"),
    ));
    write_manifest(ctx, manifest)?;
    println!("artifacts in {}", ctx.dir.display());
    Ok(())
}

// ----------------------------------------------------------- toy training

fn train_toy(
    arch: Architecture,
    seed: u64,
    iters: usize,
) -> Result<(Vec<IterMetrics>, PolicyBundle), crate::marl::TrainError> {
    let cfg = coop_ppo_config();
    let envs: Vec<CoopCartArm> = (0..cfg.num_envs).map(|_| CoopCartArm::new()).collect();
    let mut trainer = Trainer::new(envs, arch, cfg, seed);
    let mut out = Vec::with_capacity(iters);
    for _ in 0..iters {
        out.push(trainer.iterate()?);
    }
    Ok((out, trainer.bundle()))
}

fn cmd_toy_coop(ctx: &Ctx, arch: Architecture, iters: usize) -> CliResult<()> {
    if iters == 0 {
        return config_err("--iters must be at least 1");
    }
    let labels = group_labels(arch, &["arm", "cart"]);
    let t0 = Instant::now();
    let (metrics, bundle) =
        train_toy(arch, ctx.seed, iters).map_err(|e| CliError::Runtime(e.to_string()))?;
    let wall = if ctx.deterministic { 0.0 } else { t0.elapsed().as_secs_f64() };

    let header = format!(
        "iteration,wall_clock_s,tracking_mean,episode_len_steps,{}",
        group_header(&labels)
    );
    let rows: Vec<String> = metrics
        .iter()
        .map(|m| {
            let w = if ctx.deterministic {
                0.0
            } else {
                wall * (m.iteration + 1) as f64 / iters as f64
            };
            format!(
                "{},{},{},{},{}",
                m.iteration,
                fmt6(w),
                fmt6(m.tracking_mean),
                fmt6(m.episode_len_mean),
                group_cells(m)
            )
        })
        .collect();
    let csv = ctx.file("metrics.csv");
    write_csv(&csv, &header, &rows)?;
    let ckpt = ctx.file("ckpt-final.bin");
    bundle
        .save(&ckpt)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    write_file(&ctx.file("config.txt"), &ppo_text(&coop_ppo_config()))?;
    training_plots(ctx, &csv, &labels)?;

    let last = metrics.last().unwrap();
    let mut manifest = ctx.base_manifest("toy-coop");
    manifest.push(("arch", arch.to_string()));
    manifest.push(("iterations", iters.to_string()));
    manifest.push(("checkpoint", "ckpt-final.bin".to_string()));
    manifest.push(("checkpoint_sha256", sha256_file(&ckpt)?));
    write_manifest(ctx, manifest)?;
    println!(
        "[toy-coop {arch}] {iters} iterations  final tracking {:.3}  adv variance {:.3}",
        last.tracking_mean,
        last.agents[0].adv_variance
    );
    println!("artifacts in {}", ctx.dir.display());
    Ok(())
}

// ------------------------------------------------------------ arch-compare

fn cmd_arch_compare(ctx: &Ctx, iters: usize, seeds: &[u64]) -> CliResult<()> {
    if iters == 0 {
        return config_err("--iters must be at least 1");
    }
    if seeds.is_empty() {
        return config_err("--seeds must name at least one seed");
    }
    let header = "arch,seed,iteration,wall_clock_s,tracking_mean,reward_mean_total,\
                  adv_variance_agent0,adv_variance_agent1";
    let mut rows = Vec::with_capacity(Architecture::ALL.len() * seeds.len() * iters);
    let mut failures = Vec::new();
    let t0 = Instant::now();
    for arch in Architecture::ALL {
        for &seed in seeds {
            match train_toy(arch, seed, iters) {
                Ok((metrics, _)) => {
                    for m in &metrics {
                        let wall = if ctx.deterministic { 0.0 } else { t0.elapsed().as_secs_f64() };
                        let reward_total: f64 = m.agents.iter().map(|a| a.mean_reward).sum();
                        let adv1 = m.agents.get(1).map(|a| a.adv_variance).unwrap_or(f64::NAN);
                        rows.push(format!(
                            "{arch},{seed},{},{},{},{},{},{}",
                            m.iteration,
                            fmt6(wall),
                            fmt6(m.tracking_mean),
                            fmt6(reward_total),
                            fmt6(m.agents[0].adv_variance),
                            fmt6(adv1)
                        ));
                    }
                    let last = metrics.last().unwrap();
                    println!(
                        "[compare] {arch} seed {seed}: final tracking {:.3}",
                        last.tracking_mean
                    );
                }
                Err(e) => {
                    let line = format!("{arch} seed {seed}: {e}");
                    println!("[compare] FAILED {line}");
                    failures.push(line);
                }
            }
        }
    }
    if rows.is_empty() {
        return runtime_err("every architecture/seed run failed");
    }

    let csv = ctx.file("arch_compare.csv");
    write_csv(&csv, header, &rows)?;
    if !failures.is_empty() {
        write_file(&ctx.file("failures.txt"), &(failures.join("\n") + "\n"))?;
    }
    write_file(&ctx.file("config.txt"), &ppo_text(&coop_ppo_config()))?;

    // Bands and the final table are computed from the re-parsed CSV.
    let (h, data) = read_csv(&csv)?;
    let (ac, sc, ic, tc, vc) = (
        col(&h, "arch")?,
        col(&h, "seed")?,
        col(&h, "iteration")?,
        col(&h, "tracking_mean")?,
        col(&h, "adv_variance_agent0")?,
    );
    let band_over = |value_col: usize| -> Vec<Band> {
        Architecture::ALL
            .iter()
            .map(|arch| {
                let name = arch.to_string();
                let points = (0..iters)
                    .map(|i| {
                        let vals: Vec<f64> = data
                            .iter()
                            .filter(|r| r[ac] == name && fval(&r[ic]) as usize == i)
                            .map(|r| fval(&r[value_col]))
                            .collect();
                        let (m, s) = mean_std(&vals);
                        (i as f64, m, s)
                    })
                    .collect();
                Band { name, points }
            })
            .collect()
    };
    write_file(
        &ctx.plot("tracking_bands.svg"),
        &plot::band_plot(
            "velocity tracking, mean ± std over seeds",
            "iteration",
            "tracking",
            &band_over(tc),
        ),
    )?;
    write_file(
        &ctx.plot("adv_variance_bands.svg"),
        &plot::band_plot(
            "agent-0 advantage variance, mean ± std over seeds",
            "iteration",
            "variance",
            &band_over(vc),
        ),
    )?;

    // Final value per seed = mean over the last three iterations.
    let tail = 3.min(iters);
    let mut table_rows = Vec::new();
    println!("\narch        seeds  median final tracking  median final adv var");
    for arch in Architecture::ALL {
        let name = arch.to_string();
        let mut finals = Vec::new();
        let mut adv_finals = Vec::new();
        for &seed in seeds {
            let vals: Vec<(usize, f64, f64)> = data
                .iter()
                .filter(|r| r[ac] == name && fval(&r[sc]) as u64 == seed)
                .map(|r| (fval(&r[ic]) as usize, fval(&r[tc]), fval(&r[vc])))
                .collect();
            if vals.is_empty() {
                continue;
            }
            let last: Vec<&(usize, f64, f64)> =
                vals.iter().filter(|v| v.0 >= iters - tail).collect();
            finals.push(last.iter().map(|v| v.1).sum::<f64>() / last.len() as f64);
            adv_finals.push(last.iter().map(|v| v.2).sum::<f64>() / last.len() as f64);
        }
        let (mean, std) = mean_std(&finals);
        let med = median(finals.clone());
        let adv_med = median(adv_finals.clone());
        table_rows.push(format!(
            "{name},{},{},{},{},{}",
            finals.len(),
            fmt6(med),
            fmt6(mean),
            fmt6(std),
            fmt6(adv_med)
        ));
        println!("{name:<10}  {:>5}  {med:>21.3}  {adv_med:>20.3}", finals.len());
    }
    write_csv(
        &ctx.file("final_table.csv"),
        "arch,seeds,median_final_tracking,mean_final_tracking,std_final_tracking,median_final_adv_variance_agent0",
        &table_rows,
    )?;

    let mut manifest = ctx.base_manifest("arch-compare");
    manifest.push(("iterations", iters.to_string()));
    manifest.push((
        "seeds",
        seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
    ));
    manifest.push(("failures", failures.len().to_string()));
    write_manifest(ctx, manifest)?;
    println!("artifacts in {}", ctx.dir.display());
    Ok(())
}

// ------------------------------------------------------- validate-dynamics

fn cmd_validate_dynamics(ctx: &Ctx) -> CliResult<()> {
    let results = validate::run_all(&ctx.model, ctx.seed);
    let mut rows = Vec::with_capacity(results.len());
    let mut failed = 0;
    for r in &results {
        println!("{} {} — {}", if r.pass { "PASS" } else { "FAIL" }, r.name, r.detail);
        rows.push(format!(
            "{},{},\"{}\"",
            r.name,
            r.pass as u8,
            r.detail.replace('"', "'")
        ));
        if !r.pass {
            failed += 1;
        }
    }
    write_csv(&ctx.file("validation.csv"), "check,pass,detail", &rows)?;
    write_file(&ctx.file("config.txt"), &ctx.env_cfg.to_text())?;
    let mut manifest = ctx.base_manifest("validate-dynamics");
    manifest.push(("checks", results.len().to_string()));
    manifest.push(("failed", failed.to_string()));
    write_manifest(ctx, manifest)?;
    println!("artifacts in {}", ctx.dir.display());
    if failed > 0 {
        return runtime_err(format!("{failed} of {} dynamics checks failed", results.len()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_strings_parse_and_reject_garbage() {
        let c = parse_command("0.6, -0.2, 0.1").unwrap();
        assert_eq!((c.vx, c.vy, c.wz), (0.6, -0.2, 0.1));
        assert!(parse_command("1,2").is_err());
        assert!(parse_command("a,b,c").is_err());
    }

    #[test]
    fn policy_labels_deduplicate_stems() {
        let labels = policy_labels(&[
            PathBuf::from("a/ckpt-final.bin"),
            PathBuf::from("b/ckpt-final.bin"),
            PathBuf::from("c/other.bin"),
        ]);
        assert_eq!(labels, vec!["ckpt-final", "ckpt-final-2", "other"]);
    }

    #[test]
    fn sha256_matches_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn command_pinning_fixes_every_reset() {
        let mut cfg = EnvConfig::default();
        pin_command(&mut cfg, CommandVel::new(0.5, 0.1, -0.2));
        let mut env = LocomotionEnv::with_mini_humanoid(cfg);
        for seed in 0..5 {
            env.reset(seed);
            assert_eq!(env.cmd, CommandVel::new(0.5, 0.1, -0.2));
        }
        let mut cfg = EnvConfig::default();
        pin_command(&mut cfg, CommandVel::default());
        let mut env = LocomotionEnv::with_mini_humanoid(cfg);
        env.reset(1);
        assert!(env.cmd.is_zero());
    }

    #[test]
    fn grid_axis_is_symmetric_and_includes_zero() {
        let taus: Vec<f64> = (0..7)
            .map(|i| -15.0 + 30.0 * i as f64 / 6.0)
            .collect();
        assert_eq!(taus.first(), Some(&-15.0));
        assert_eq!(taus.last(), Some(&15.0));
        assert!(taus.iter().any(|&t| t == 0.0));
        for t in &taus {
            assert!(taus.iter().any(|u| (u + t).abs() < 1e-12));
        }
    }

    #[test]
    fn csv_round_trips_through_reader() {
        let dir = std::env::temp_dir().join("limbrl-cli-csv-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.csv");
        write_csv(&path, "a,b", &["1,2".to_string(), "3,4".to_string()]).unwrap();
        let (h, rows) = read_csv(&path).unwrap();
        assert_eq!(h, vec!["a", "b"]);
        assert_eq!(rows.len(), 2);
        assert_eq!(col(&h, "b").unwrap(), 1);
        assert_eq!(fval(&rows[1][0]), 3.0);
        fs::remove_dir_all(&dir).ok();
    }
}
