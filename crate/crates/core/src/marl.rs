//! Multi-agent PPO: generalized advantage estimation, clipped-surrogate
//! updates with advantage-variance instrumentation, and the four training
//! architectures — one joint agent, decentralized critics, centralized
//! critics with decentralized actors, and fully centralized — expressed as
//! observation-source wiring over the same rollout machinery.
//!
//! Rollouts use one read-only parameter snapshot and one RNG stream per
//! environment, and observation-normalizer updates are applied afterwards in
//! a fixed order, so results are identical at any thread count.

use crate::net::{
    clip_grad_norm, Adam, CkptReader, CkptWriter, FlatParams, GaussianPolicy, Mlp, PolicyGrads,
    RunningNorm,
};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

/// Who sees what: each variant fixes the observation source (local or
/// global) for actors and critics, and whether one joint agent acts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    /// One actor-critic over global observations and the joint action;
    /// all agents' rewards are summed into a single return.
    Single,
    /// Decentralized training and execution: local actors, local critics.
    Dtde,
    /// Centralized training, decentralized execution: local actors,
    /// global critics.
    Ctde,
    /// Centralized training and execution: global actors, global critics.
    Ctce,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::Single,
        Architecture::Dtde,
        Architecture::Ctde,
        Architecture::Ctce,
    ];

    pub fn joint(&self) -> bool {
        matches!(self, Architecture::Single)
    }

    pub fn actor_global(&self) -> bool {
        matches!(self, Architecture::Single | Architecture::Ctce)
    }

    pub fn critic_global(&self) -> bool {
        !matches!(self, Architecture::Dtde)
    }

    fn tag(&self) -> u32 {
        match self {
            Architecture::Single => 0,
            Architecture::Dtde => 1,
            Architecture::Ctde => 2,
            Architecture::Ctce => 3,
        }
    }

    fn from_tag(t: u32) -> Option<Self> {
        Architecture::ALL.into_iter().find(|a| a.tag() == t)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Architecture::Single => "single",
            Architecture::Dtde => "dtde",
            Architecture::Ctde => "ctde",
            Architecture::Ctce => "ctce",
        };
        f.write_str(s)
    }
}

impl FromStr for Architecture {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" => Ok(Architecture::Single),
            "dtde" => Ok(Architecture::Dtde),
            "ctde" => Ok(Architecture::Ctde),
            "ctce" => Ok(Architecture::Ctce),
            other => Err(format!(
                "unknown architecture '{other}' (expected single, dtde, ctde, or ctce)"
            )),
        }
    }
}

/// Observations for one environment state: one vector per agent plus the
/// concatenated global view.
#[derive(Clone, Debug)]
pub struct MarlObs {
    pub local: Vec<DVector<f64>>,
    pub global: DVector<f64>,
}

/// One environment transition; `obs` is the post-step state before any
/// reset, so truncation bootstraps can be computed from it.
#[derive(Clone, Debug)]
pub struct MarlStep {
    pub obs: MarlObs,
    pub rewards: Vec<f64>,
    pub terminated: bool,
    pub truncated: bool,
    /// Task-progress scalar in [0, 1] (velocity tracking for locomotion).
    pub tracking: f64,
}

/// A multi-agent environment: all agents share one simulated transition per
/// step — the trainer never steps the world twice.
pub trait MarlEnv: Send {
    fn n_agents(&self) -> usize;
    fn local_obs_dims(&self) -> Vec<usize>;
    fn global_obs_dim(&self) -> usize;
    fn action_dims(&self) -> Vec<usize>;
    fn reset(&mut self, seed: u64) -> MarlObs;
    fn step(&mut self, actions: &[DVector<f64>]) -> MarlStep;
}

#[derive(Clone, Debug)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lam: f64,
    pub clip: f64,
    pub lr: f64,
    /// Critic learning rate; value regression tolerates a hotter step than
    /// the clipped policy update.
    pub value_lr: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub kl_limit: f64,
    pub horizon: usize,
    pub num_envs: usize,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lam: 0.95,
            clip: 0.2,
            lr: 3e-4,
            value_lr: 1e-3,
            epochs: 5,
            minibatches: 4,
            entropy_coef: 0.005,
            max_grad_norm: 1.0,
            kl_limit: 0.5,
            horizon: 24,
            num_envs: 256,
            hidden: vec![256, 128],
            init_log_std: -0.5,
        }
    }
}

/// Generalized advantage estimation over a (T × N) rollout.
///
/// `dones[(t, e)]` is 1.0 where the episode ended after step t; `boot[(t, e)]`
/// is the value bootstrapped past that boundary (zero for terminations, the
/// pre-reset state's value for truncations). `last_values` bootstraps open
/// episodes at the horizon. Returns (advantages, returns = advantages + values).
pub fn gae(
    rewards: &DMatrix<f64>,
    values: &DMatrix<f64>,
    dones: &DMatrix<f64>,
    boot: &DMatrix<f64>,
    last_values: &DVector<f64>,
    gamma: f64,
    lam: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (t_len, n_envs) = rewards.shape();
    assert_eq!(values.shape(), (t_len, n_envs));
    assert_eq!(dones.shape(), (t_len, n_envs));
    assert_eq!(boot.shape(), (t_len, n_envs));
    assert_eq!(last_values.len(), n_envs);
    let mut adv = DMatrix::zeros(t_len, n_envs);
    for e in 0..n_envs {
        let mut next_adv = 0.0;
        let mut next_value = last_values[e];
        for t in (0..t_len).rev() {
            if dones[(t, e)] != 0.0 {
                next_adv = 0.0;
                next_value = boot[(t, e)];
            }
            let delta = rewards[(t, e)] + gamma * next_value - values[(t, e)];
            adv[(t, e)] = delta + gamma * lam * next_adv;
            next_adv = adv[(t, e)];
            next_value = values[(t, e)];
        }
    }
    let returns = &adv + values;
    (adv, returns)
}

/// Population variance of raw advantages — the instrumentation metric.
/// Computed before normalization, which would pin it to one.
pub fn advantage_variance(adv: &[f64]) -> f64 {
    assert!(!adv.is_empty());
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n
}

/// PPO's clipped surrogate for one sample: min(r·A, clip(r, 1±ε)·A).
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * advantage;
    unclipped.min(clipped)
}

/// One policy/value pair with its observation normalizers and optimizers.
#[derive(Clone)]
pub struct ActorCritic {
    pub policy: GaussianPolicy,
    pub value: Mlp,
    pub obs_norm: RunningNorm,
    pub critic_norm: RunningNorm,
    policy_opt: Adam,
    value_opt: Adam,
}

impl ActorCritic {
    pub fn new(
        obs_dim: usize,
        critic_dim: usize,
        action_dim: usize,
        cfg: &PpoConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut policy_dims = vec![obs_dim];
        policy_dims.extend(&cfg.hidden);
        policy_dims.push(action_dim);
        let mut value_dims = vec![critic_dim];
        value_dims.extend(&cfg.hidden);
        value_dims.push(1);
        let policy = GaussianPolicy::new(&policy_dims, cfg.init_log_std, rng);
        let value = Mlp::new(&value_dims, rng);
        let policy_opt = Adam::new(policy.flat_len(), cfg.lr);
        let value_opt = Adam::new(value.flat_len(), cfg.value_lr);
        Self {
            policy,
            value,
            obs_norm: RunningNorm::new(obs_dim),
            critic_norm: RunningNorm::new(critic_dim),
            policy_opt,
            value_opt,
        }
    }
}

/// Flattened (T·N) learning batch for one actor-critic. Advantages are raw;
/// the update normalizes its own copy.
#[derive(Clone, Debug)]
pub struct AgentBatch {
    pub obs: DMatrix<f64>,
    pub critic_obs: DMatrix<f64>,
    pub actions: DMatrix<f64>,
    pub old_log_probs: DVector<f64>,
    pub advantages: DVector<f64>,
    pub returns: DVector<f64>,
}

impl AgentBatch {
    pub fn len(&self) -> usize {
        self.obs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn rows(&self, idx: &[usize]) -> AgentBatch {
        let take_m = |m: &DMatrix<f64>| {
            DMatrix::from_fn(idx.len(), m.ncols(), |r, c| m[(idx[r], c)])
        };
        let take_v = |v: &DVector<f64>| DVector::from_fn(idx.len(), |r, _| v[idx[r]]);
        AgentBatch {
            obs: take_m(&self.obs),
            critic_obs: take_m(&self.critic_obs),
            actions: take_m(&self.actions),
            old_log_probs: take_v(&self.old_log_probs),
            advantages: take_v(&self.advantages),
            returns: take_v(&self.returns),
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub kl: f64,
    pub entropy: f64,
    pub adv_variance: f64,
    pub kl_stopped: bool,
}

fn normalized_advantages(adv: &DVector<f64>) -> DVector<f64> {
    let n = adv.len() as f64;
    let mean = adv.sum() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    adv.map(|a| (a - mean) / (std + 1e-8))
}

/// Policy gradient (flattened, batch-mean loss) of the clipped surrogate
/// plus entropy bonus at the current parameters, without applying it.
pub fn actor_gradient(ac: &ActorCritic, batch: &AgentBatch, cfg: &PpoConfig) -> DVector<f64> {
    let adv_n = normalized_advantages(&batch.advantages);
    let (grads, _, _) = surrogate_gradient(ac, batch, &adv_n, cfg);
    grads.to_flat()
}

/// Shared core of the update: gradient of
/// −mean(surrogate) − entropy_coef·H with respect to policy parameters.
/// Also returns the mean surrogate loss and the KL estimate.
fn surrogate_gradient(
    ac: &ActorCritic,
    mb: &AgentBatch,
    adv_n: &DVector<f64>,
    cfg: &PpoConfig,
) -> (PolicyGrads, f64, f64) {
    let b = mb.len() as f64;
    let cache = ac.policy.mean_net.forward_cached(&mb.obs);
    let means = cache.output().clone();
    let new_logp = ac.policy.log_prob_from_means(&means, &mb.actions);
    let mut kl = 0.0;
    let mut loss = 0.0;
    // d(loss)/d(log p_s) for each sample.
    let mut w = DVector::zeros(mb.len());
    for s in 0..mb.len() {
        let logdiff = (new_logp[s] - mb.old_log_probs[s]).clamp(-40.0, 40.0);
        let ratio = logdiff.exp();
        kl += mb.old_log_probs[s] - new_logp[s];
        let a = adv_n[s];
        let unclipped = ratio * a;
        let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * a;
        loss -= unclipped.min(clipped);
        // The min picks the unclipped branch when it is not larger; only
        // that branch moves with the parameters (the clipped one is flat).
        if unclipped <= clipped {
            w[s] = -ratio * a / b;
        }
    }
    kl /= b;
    loss = loss / b - cfg.entropy_coef * ac.policy.entropy();

    let mut d_mean = ac.policy.dlogp_dmean(&means, &mb.actions);
    for (s, mut row) in d_mean.row_iter_mut().enumerate() {
        row *= w[s];
    }
    let (net_grads, _) = ac.policy.mean_net.backward(&cache, &d_mean);
    let d_ls = ac.policy.dlogp_dlogstd(&means, &mb.actions);
    let log_std_grad = DVector::from_fn(ac.policy.log_std.len(), |i, _| {
        let surrogate: f64 = (0..mb.len()).map(|s| w[s] * d_ls[(s, i)]).sum();
        surrogate - cfg.entropy_coef
    });
    (
        PolicyGrads {
            net: net_grads,
            log_std: log_std_grad,
        },
        loss,
        kl,
    )
}

/// One PPO update over the batch: minibatched epochs of clipped-surrogate
/// policy steps and value MSE steps, aborted if the KL estimate diverges.
pub fn ppo_update(
    ac: &mut ActorCritic,
    batch: &AgentBatch,
    cfg: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> UpdateStats {
    let adv_variance = advantage_variance(batch.advantages.as_slice());
    let adv_n = normalized_advantages(&batch.advantages);
    let b = batch.len();
    let mb_size = b.div_ceil(cfg.minibatches);
    let mut order: Vec<usize> = (0..b).collect();

    let mut stats = UpdateStats {
        adv_variance,
        ..Default::default()
    };
    let mut n_minibatches = 0.0;
    'epochs: for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(mb_size) {
            let mb = batch.rows(chunk);
            let mb_adv = DVector::from_fn(chunk.len(), |r, _| adv_n[chunk[r]]);
            let (grads, policy_loss, kl) = surrogate_gradient(ac, &mb, &mb_adv, cfg);
            if kl > cfg.kl_limit {
                stats.kl_stopped = true;
                stats.kl = kl;
                break 'epochs;
            }
            let mut flat = grads.to_flat();
            clip_grad_norm(&mut flat, cfg.max_grad_norm);
            let mut params = ac.policy.to_flat();
            ac.policy_opt.step(&mut params, &flat);
            ac.policy.copy_from_flat(params.as_slice());
            ac.policy.clamp_log_std();

            // Value regression toward the GAE returns.
            let vcache = ac.value.forward_cached(&mb.critic_obs);
            let v = vcache.output().column(0).clone_owned();
            let err = &v - &mb.returns;
            let value_loss = 0.5 * err.norm_squared() / chunk.len() as f64;
            let d_out = DMatrix::from_fn(chunk.len(), 1, |r, _| err[r] / chunk.len() as f64);
            let (vgrads, _) = ac.value.backward(&vcache, &d_out);
            let mut vflat = vgrads.to_flat();
            clip_grad_norm(&mut vflat, cfg.max_grad_norm);
            let mut vparams = ac.value.to_flat();
            ac.value_opt.step(&mut vparams, &vflat);
            ac.value.copy_from_flat(vparams.as_slice());

            stats.policy_loss += policy_loss;
            stats.value_loss += value_loss;
            stats.kl = kl;
            n_minibatches += 1.0;
        }
    }
    if n_minibatches > 0.0 {
        stats.policy_loss /= n_minibatches;
        stats.value_loss /= n_minibatches;
    }
    stats.entropy = ac.policy.entropy();
    stats
}

#[derive(Clone, Copy, Debug, Default)]
pub struct AgentMetrics {
    pub mean_reward: f64,
    pub adv_variance: f64,
    /// Variance of the empirical returns the critic was regressed toward;
    /// the adv_variance/ret_variance ratio is the unexplained share.
    pub ret_variance: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub kl: f64,
    pub entropy: f64,
    pub kl_stopped: bool,
}

#[derive(Clone, Debug, Default)]
pub struct IterMetrics {
    pub iteration: usize,
    pub wall_clock_s: f64,
    /// Mean task-progress scalar over every collected step.
    pub tracking_mean: f64,
    /// Mean completed-episode length in steps (0 if none completed).
    pub episode_len_mean: f64,
    pub agents: Vec<AgentMetrics>,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("non-finite {context} in iteration {iteration}")]
    NonFinite { context: String, iteration: usize },
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
}

/// Everything a saved checkpoint restores: per-group networks, normalizers,
/// and the wiring needed to act.
pub struct PolicyBundle {
    pub arch: Architecture,
    pub action_dims: Vec<usize>,
    pub agents: Vec<SavedAgent>,
}

pub struct SavedAgent {
    pub policy: GaussianPolicy,
    pub value: Mlp,
    pub obs_norm: RunningNorm,
    pub critic_norm: RunningNorm,
}

impl PolicyBundle {
    /// Deterministic (mean) actions for every agent, split from the joint
    /// head when the architecture is single.
    pub fn act(&self, obs: &MarlObs) -> Vec<DVector<f64>> {
        if self.arch.joint() {
            let x = self.agents[0].obs_norm.normalize(&obs.global);
            let joint = self.agents[0].policy.mean_net.forward_row(&x);
            let mut out = Vec::with_capacity(self.action_dims.len());
            let mut k = 0;
            for &d in &self.action_dims {
                out.push(joint.rows(k, d).into_owned());
                k += d;
            }
            out
        } else {
            self.agents
                .iter()
                .enumerate()
                .map(|(i, a)| {
                    let raw = if self.arch.actor_global() {
                        &obs.global
                    } else {
                        &obs.local[i]
                    };
                    a.policy.mean_net.forward_row(&a.obs_norm.normalize(raw))
                })
                .collect()
        }
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = CkptWriter::new(io::BufWriter::new(file))?;
        w.write_u32(self.arch.tag())?;
        w.write_u32(self.action_dims.len() as u32)?;
        for &d in &self.action_dims {
            w.write_u32(d as u32)?;
        }
        w.write_u32(self.agents.len() as u32)?;
        for a in &self.agents {
            w.write_policy(&a.policy)?;
            w.write_mlp(&a.value)?;
            w.write_norm(&a.obs_norm)?;
            w.write_norm(&a.critic_norm)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut r = CkptReader::new(io::BufReader::new(file))?;
        let arch = Architecture::from_tag(r.read_u32()?)
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "bad architecture tag"))?;
        let n_dims = r.read_u32()? as usize;
        let mut action_dims = Vec::with_capacity(n_dims);
        for _ in 0..n_dims {
            action_dims.push(r.read_u32()? as usize);
        }
        let n_agents = r.read_u32()? as usize;
        let mut agents = Vec::with_capacity(n_agents);
        for _ in 0..n_agents {
            agents.push(SavedAgent {
                policy: r.read_policy()?,
                value: r.read_mlp()?,
                obs_norm: r.read_norm()?,
                critic_norm: r.read_norm()?,
            });
        }
        Ok(Self {
            arch,
            action_dims,
            agents,
        })
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct EvalStats {
    /// Mean per-episode sum of all agents' rewards.
    pub mean_return: f64,
    /// Mean per-step tracking scalar.
    pub mean_tracking: f64,
    /// Mean episode length in steps.
    pub mean_len: f64,
}

/// Runs deterministic (mean-action) episodes and averages their outcomes.
pub fn evaluate<E: MarlEnv>(
    bundle: &PolicyBundle,
    env: &mut E,
    episodes: u64,
    seed: u64,
) -> EvalStats {
    let mut total_return = 0.0;
    let mut total_tracking = 0.0;
    let mut total_steps = 0usize;
    for ep in 0..episodes {
        let mut obs = env.reset(derive_seed(seed, 4, ep));
        loop {
            let actions = bundle.act(&obs);
            let step = env.step(&actions);
            total_return += step.rewards.iter().sum::<f64>();
            total_tracking += step.tracking;
            total_steps += 1;
            if step.terminated || step.truncated {
                break;
            }
            obs = step.obs;
        }
    }
    EvalStats {
        mean_return: total_return / episodes as f64,
        mean_tracking: total_tracking / total_steps as f64,
        mean_len: total_steps as f64 / episodes as f64,
    }
}

/// Per-(step, env) record captured during a rollout.
struct StepTrace {
    raw_actor_obs: Vec<DVector<f64>>,
    raw_critic_obs: Vec<DVector<f64>>,
    actor_obs: Vec<DVector<f64>>,
    critic_obs: Vec<DVector<f64>>,
    actions: Vec<DVector<f64>>,
    log_probs: Vec<f64>,
    values: Vec<f64>,
    rewards: Vec<f64>,
    done: bool,
    boot: Vec<f64>,
    tracking: f64,
    episode_len: Option<usize>,
}

struct EnvTrace {
    steps: Vec<StepTrace>,
    last_values: Vec<f64>,
}

/// A full iteration's collected experience, exposed so tests can inspect and
/// perturb it before batches are built.
pub struct Rollout {
    traces: Vec<EnvTrace>,
    pub tracking_mean: f64,
    pub episode_len_mean: f64,
    pub mean_rewards: Vec<f64>,
}

impl Rollout {
    /// Mutable access to the stored actor observations of one group at
    /// (step, env) — test hook for wiring checks.
    pub fn actor_obs_mut(&mut self, group: usize, t: usize, e: usize) -> &mut DVector<f64> {
        &mut self.traces[e].steps[t].actor_obs[group]
    }

    pub fn critic_obs_mut(&mut self, group: usize, t: usize, e: usize) -> &mut DVector<f64> {
        &mut self.traces[e].steps[t].critic_obs[group]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.traces[0].steps.len(), self.traces.len())
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream ^ splitmix64(index)))
}

pub struct Trainer<E: MarlEnv> {
    pub arch: Architecture,
    pub cfg: PpoConfig,
    pub agents: Vec<ActorCritic>,
    pub seed: u64,
    envs: Vec<E>,
    env_rngs: Vec<ChaCha8Rng>,
    reset_counters: Vec<u64>,
    episode_steps: Vec<usize>,
    last_obs: Vec<MarlObs>,
    action_dims: Vec<usize>,
    update_rng: ChaCha8Rng,
    iteration: usize,
}

impl<E: MarlEnv> Trainer<E> {
    pub fn new(mut envs: Vec<E>, arch: Architecture, cfg: PpoConfig, seed: u64) -> Self {
        assert!(!envs.is_empty());
        let n_agents = envs[0].n_agents();
        let local_dims = envs[0].local_obs_dims();
        let global_dim = envs[0].global_obs_dim();
        let action_dims = envs[0].action_dims();
        let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, 0));

        let agents = if arch.joint() {
            let joint_act: usize = action_dims.iter().sum();
            vec![ActorCritic::new(global_dim, global_dim, joint_act, &cfg, &mut init_rng)]
        } else {
            (0..n_agents)
                .map(|i| {
                    let obs_dim = if arch.actor_global() { global_dim } else { local_dims[i] };
                    let critic_dim = if arch.critic_global() { global_dim } else { local_dims[i] };
                    ActorCritic::new(obs_dim, critic_dim, action_dims[i], &cfg, &mut init_rng)
                })
                .collect()
        };

        let env_rngs = (0..envs.len())
            .map(|e| ChaCha8Rng::seed_from_u64(derive_seed(seed, 1, e as u64)))
            .collect();
        let mut reset_counters = vec![0u64; envs.len()];
        let last_obs = envs
            .iter_mut()
            .enumerate()
            .map(|(e, env)| {
                let s = derive_seed(seed, 2 + e as u64, reset_counters[e]);
                reset_counters[e] += 1;
                env.reset(s)
            })
            .collect();

        Self {
            arch,
            cfg,
            agents,
            seed,
            episode_steps: vec![0; envs.len()],
            envs,
            env_rngs,
            reset_counters,
            last_obs,
            action_dims,
            update_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, 3, 0)),
            iteration: 0,
        }
    }

    pub fn n_groups(&self) -> usize {
        self.agents.len()
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Mutable view of the training environments, for drains of env-side
    /// statistics (e.g. reward components) between iterations.
    pub fn envs_mut(&mut self) -> &mut [E] {
        &mut self.envs
    }

    fn group_obs<'a>(arch: Architecture, obs: &'a MarlObs, group: usize, actor: bool) -> &'a DVector<f64> {
        let global = if actor { arch.actor_global() } else { arch.critic_global() };
        if global {
            &obs.global
        } else {
            &obs.local[group]
        }
    }

    /// Collects `horizon` steps from every environment in parallel, using the
    /// current parameters as a read-only snapshot. Normalizer statistics are
    /// folded in afterwards in a fixed order, so thread count never changes
    /// the result.
    pub fn collect_rollout(&mut self) -> Rollout {
        let Self {
            arch,
            cfg,
            agents,
            envs,
            env_rngs,
            reset_counters,
            episode_steps,
            last_obs,
            action_dims,
            seed,
            ..
        } = self;
        let arch = *arch;
        let horizon = cfg.horizon;
        let n_groups = agents.len();
        let agents_ref: &[ActorCritic] = agents;

        let mut work: Vec<(usize, &mut E, &mut ChaCha8Rng, &mut u64, &mut usize, &mut MarlObs)> =
            envs.iter_mut()
                .zip(env_rngs.iter_mut())
                .zip(reset_counters.iter_mut())
                .zip(episode_steps.iter_mut())
                .zip(last_obs.iter_mut())
                .enumerate()
                .map(|(e, ((((env, rng), rc), es), lo))| (e, env, rng, rc, es, lo))
                .collect();

        let traces: Vec<EnvTrace> = work
            .par_iter_mut()
            .map(|(e, env, rng, reset_counter, episode_step, last)| {
                let e = *e;
                let mut steps = Vec::with_capacity(horizon);
                for _ in 0..horizon {
                    let obs = (*last).clone();
                    let mut raw_actor = Vec::with_capacity(n_groups);
                    let mut raw_critic = Vec::with_capacity(n_groups);
                    let mut actor_in = Vec::with_capacity(n_groups);
                    let mut critic_in = Vec::with_capacity(n_groups);
                    let mut actions = Vec::with_capacity(n_groups);
                    let mut log_probs = Vec::with_capacity(n_groups);
                    let mut values = Vec::with_capacity(n_groups);
                    for (g, ac) in agents_ref.iter().enumerate() {
                        let ra = Self::group_obs(arch, &obs, g, true).clone();
                        let rc = Self::group_obs(arch, &obs, g, false).clone();
                        let na = ac.obs_norm.normalize(&ra);
                        let nc = ac.critic_norm.normalize(&rc);
                        let (a, lp) = ac.policy.sample_with_log_prob(&na, rng);
                        values.push(ac.value.forward_row(&nc)[0]);
                        actions.push(a);
                        log_probs.push(lp);
                        raw_actor.push(ra);
                        raw_critic.push(rc);
                        actor_in.push(na);
                        critic_in.push(nc);
                    }
                    let env_actions = if arch.joint() {
                        let joint = &actions[0];
                        let mut split = Vec::with_capacity(action_dims.len());
                        let mut k = 0;
                        for &d in action_dims.iter() {
                            split.push(joint.rows(k, d).into_owned());
                            k += d;
                        }
                        split
                    } else {
                        actions.clone()
                    };
                    let step = env.step(&env_actions);
                    let rewards = if arch.joint() {
                        vec![step.rewards.iter().sum::<f64>()]
                    } else {
                        step.rewards.clone()
                    };
                    **episode_step += 1;

                    let done = step.terminated || step.truncated;
                    let mut boot = vec![0.0; n_groups];
                    let mut episode_len = None;
                    if done {
                        if step.truncated {
                            for (g, ac) in agents_ref.iter().enumerate() {
                                let rc = Self::group_obs(arch, &step.obs, g, false);
                                let nc = ac.critic_norm.normalize(rc);
                                boot[g] = ac.value.forward_row(&nc)[0];
                            }
                        }
                        episode_len = Some(**episode_step);
                        **episode_step = 0;
                        let s = derive_seed(*seed, 2 + e as u64, **reset_counter);
                        **reset_counter += 1;
                        **last = env.reset(s);
                    } else {
                        **last = step.obs;
                    }
                    steps.push(StepTrace {
                        raw_actor_obs: raw_actor,
                        raw_critic_obs: raw_critic,
                        actor_obs: actor_in,
                        critic_obs: critic_in,
                        actions,
                        log_probs,
                        values,
                        rewards,
                        done,
                        boot,
                        tracking: step.tracking,
                        episode_len,
                    });
                }
                let last_values = agents_ref
                    .iter()
                    .enumerate()
                    .map(|(g, ac)| {
                        let rc = Self::group_obs(arch, last, g, false);
                        ac.value.forward_row(&ac.critic_norm.normalize(rc))[0]
                    })
                    .collect();
                EnvTrace { steps, last_values }
            })
            .collect();

        // Fold the raw observations into the normalizers in (env, step)
        // order — deterministic regardless of rollout thread interleaving.
        for trace in &traces {
            for st in &trace.steps {
                for (g, ac) in agents.iter_mut().enumerate() {
                    ac.obs_norm.update(&st.raw_actor_obs[g]);
                    ac.critic_norm.update(&st.raw_critic_obs[g]);
                }
            }
        }

        let total = (horizon * traces.len()) as f64;
        let tracking_mean = traces
            .iter()
            .flat_map(|t| t.steps.iter().map(|s| s.tracking))
            .sum::<f64>()
            / total;
        let mut ep_lens = Vec::new();
        for t in &traces {
            for s in &t.steps {
                if let Some(l) = s.episode_len {
                    ep_lens.push(l as f64);
                }
            }
        }
        let episode_len_mean = if ep_lens.is_empty() {
            0.0
        } else {
            ep_lens.iter().sum::<f64>() / ep_lens.len() as f64
        };
        let mean_rewards = (0..n_groups)
            .map(|g| {
                traces
                    .iter()
                    .flat_map(|t| t.steps.iter().map(move |s| s.rewards[g]))
                    .sum::<f64>()
                    / total
            })
            .collect();

        Rollout {
            traces,
            tracking_mean,
            episode_len_mean,
            mean_rewards,
        }
    }

    /// GAE per group, then flattening to (T·N)-row matrices.
    pub fn build_batches(&self, rollout: &Rollout) -> Vec<AgentBatch> {
        let (t_len, n_envs) = rollout.shape();
        (0..self.agents.len())
            .map(|g| {
                let at = |t: usize, e: usize| &rollout.traces[e].steps[t];
                let rewards = DMatrix::from_fn(t_len, n_envs, |t, e| at(t, e).rewards[g]);
                let values = DMatrix::from_fn(t_len, n_envs, |t, e| at(t, e).values[g]);
                let dones =
                    DMatrix::from_fn(t_len, n_envs, |t, e| if at(t, e).done { 1.0 } else { 0.0 });
                let boot = DMatrix::from_fn(t_len, n_envs, |t, e| at(t, e).boot[g]);
                let last_values =
                    DVector::from_fn(n_envs, |e, _| rollout.traces[e].last_values[g]);
                let (adv, ret) = gae(
                    &rewards,
                    &values,
                    &dones,
                    &boot,
                    &last_values,
                    self.cfg.gamma,
                    self.cfg.lam,
                );

                let b = t_len * n_envs;
                let obs_dim = at(0, 0).actor_obs[g].len();
                let critic_dim = at(0, 0).critic_obs[g].len();
                let act_dim = at(0, 0).actions[g].len();
                let row = |i: usize| (i / n_envs, i % n_envs);
                let obs = DMatrix::from_fn(b, obs_dim, |i, c| {
                    let (t, e) = row(i);
                    at(t, e).actor_obs[g][c]
                });
                let critic_obs = DMatrix::from_fn(b, critic_dim, |i, c| {
                    let (t, e) = row(i);
                    at(t, e).critic_obs[g][c]
                });
                let actions = DMatrix::from_fn(b, act_dim, |i, c| {
                    let (t, e) = row(i);
                    at(t, e).actions[g][c]
                });
                let old_log_probs = DVector::from_fn(b, |i, _| {
                    let (t, e) = row(i);
                    at(t, e).log_probs[g]
                });
                let advantages = DVector::from_fn(b, |i, _| {
                    let (t, e) = row(i);
                    adv[(t, e)]
                });
                let returns = DVector::from_fn(b, |i, _| {
                    let (t, e) = row(i);
                    ret[(t, e)]
                });
                AgentBatch {
                    obs,
                    critic_obs,
                    actions,
                    old_log_probs,
                    advantages,
                    returns,
                }
            })
            .collect()
    }

    /// One training iteration: rollout, GAE, and a PPO update per group.
    pub fn iterate(&mut self) -> Result<IterMetrics, TrainError> {
        let start = Instant::now();
        self.iteration += 1;
        let rollout = self.collect_rollout();
        let batches = self.build_batches(&rollout);
        let mut agents_m = Vec::with_capacity(self.agents.len());
        for (g, batch) in batches.iter().enumerate() {
            if !batch.advantages.iter().all(|a| a.is_finite())
                || !batch.returns.iter().all(|r| r.is_finite())
            {
                return Err(TrainError::NonFinite {
                    context: format!("advantages/returns for agent {g}"),
                    iteration: self.iteration,
                });
            }
            let stats = ppo_update(&mut self.agents[g], batch, &self.cfg, &mut self.update_rng);
            if !stats.policy_loss.is_finite() || !stats.value_loss.is_finite() {
                return Err(TrainError::NonFinite {
                    context: format!("losses for agent {g}"),
                    iteration: self.iteration,
                });
            }
            agents_m.push(AgentMetrics {
                mean_reward: rollout.mean_rewards[g],
                adv_variance: stats.adv_variance,
                ret_variance: advantage_variance(batch.returns.as_slice()),
                policy_loss: stats.policy_loss,
                value_loss: stats.value_loss,
                kl: stats.kl,
                entropy: stats.entropy,
                kl_stopped: stats.kl_stopped,
            });
        }
        Ok(IterMetrics {
            iteration: self.iteration,
            wall_clock_s: start.elapsed().as_secs_f64(),
            tracking_mean: rollout.tracking_mean,
            episode_len_mean: rollout.episode_len_mean,
            agents: agents_m,
        })
    }

    pub fn bundle(&self) -> PolicyBundle {
        PolicyBundle {
            arch: self.arch,
            action_dims: self.action_dims.clone(),
            agents: self
                .agents
                .iter()
                .map(|a| SavedAgent {
                    policy: a.policy.clone(),
                    value: a.value.clone(),
                    obs_norm: a.obs_norm.clone(),
                    critic_norm: a.critic_norm.clone(),
                })
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        self.bundle().save(path)
    }

    /// Restores saved parameters and normalizers into this trainer
    /// (optimizer moments start fresh).
    pub fn restore(&mut self, bundle: &PolicyBundle) {
        assert_eq!(bundle.arch, self.arch, "architecture mismatch");
        assert_eq!(bundle.agents.len(), self.agents.len());
        for (ac, saved) in self.agents.iter_mut().zip(&bundle.agents) {
            ac.policy = saved.policy.clone();
            ac.value = saved.value.clone();
            ac.obs_norm = saved.obs_norm.clone();
            ac.critic_norm = saved.critic_norm.clone();
        }
    }
}
