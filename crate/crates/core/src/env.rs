//! The locomotion MDP on top of the simulator: arm/leg/global observation
//! views, residual-position actions through an inner PD loop, momentum and
//! velocity tracking rewards with regularizers, command sampling, gait
//! phase, termination, and scheduled disturbances.
//!
//! Angular-momentum observations use a mixed frame: x and y in the
//! yaw-aligned base frame, z in the world frame — so the vertical component
//! is heading-invariant while the horizontal pair follows the robot.

use crate::centroidal::{momentum_rate_bias, CentroidalQuantities, CommandVel};
use crate::config::EnvConfig;
use crate::model::{forward_kinematics, mini_humanoid, GeneralizedState, RobotModel};
use crate::sim::{apply_disturbance, GrmSample, SimState, Simulator};
use crate::spatial::SpatialForce;
use nalgebra::{DVector, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// Periodic gait phase in [0,1) with its stance schedule.
#[derive(Clone, Copy, Debug)]
pub struct GaitClock {
    pub phase: f64,
    pub period: f64,
}

impl GaitClock {
    pub fn new(period: f64) -> Self {
        Self { phase: 0.0, period }
    }

    pub fn advance(&mut self, dt: f64) {
        self.phase = (self.phase + dt / self.period).rem_euclid(1.0);
    }

    /// (sin 2πφ, cos 2πφ) observation encoding.
    pub fn encode(&self) -> (f64, f64) {
        let a = 2.0 * std::f64::consts::PI * self.phase;
        (a.sin(), a.cos())
    }

    /// Stance schedule in [−1,1]: +1 wants right-foot stance, −1 left.
    pub fn contact_schedule(&self) -> f64 {
        (2.0 * std::f64::consts::PI * self.phase).cos()
    }
}

/// Rotates a world vector's horizontal pair into the yaw-aligned base frame,
/// keeping z in world coordinates.
pub fn mixed_frame(world: &Vector3<f64>, yaw: f64) -> Vector3<f64> {
    let (s, c) = yaw.sin_cos();
    Vector3::new(c * world.x + s * world.y, -s * world.x + c * world.y, world.z)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Agent {
    Arm,
    Leg,
}

/// Named observation blocks; the dimension is always the block sum.
#[derive(Clone, Debug)]
pub struct ObsLayout {
    pub blocks: Vec<(&'static str, usize)>,
}

impl ObsLayout {
    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|(_, d)| d).sum()
    }
}

#[derive(Clone, Debug)]
pub struct AgentSpec {
    pub agent: Agent,
    pub layout: ObsLayout,
    pub action_dim: usize,
}

const BASE_BLOCKS: [(&str, usize); 5] = [
    ("base_height", 1),
    ("base_heading", 1),
    ("base_lin_vel", 3),
    ("base_ang_vel", 3),
    ("projected_gravity", 3),
];

pub fn arm_obs_dim(n_arm: usize) -> usize {
    17 + 3 * n_arm
}

pub fn leg_obs_dim(n_leg: usize) -> usize {
    22 + 3 * n_leg
}

pub fn global_obs_dim(n_leg: usize, n_arm: usize) -> usize {
    22 + 3 * (n_leg + n_arm)
}

impl AgentSpec {
    pub fn arm(n_arm: usize) -> Self {
        let mut blocks = BASE_BLOCKS.to_vec();
        blocks.extend([
            ("q_arm", n_arm),
            ("qd_arm", n_arm),
            ("prev_arm_action", n_arm),
            ("cam", 3),
            ("cam_target", 3),
        ]);
        let layout = ObsLayout { blocks };
        assert_eq!(layout.dim(), arm_obs_dim(n_arm));
        Self {
            agent: Agent::Arm,
            layout,
            action_dim: n_arm,
        }
    }

    pub fn leg(n_leg: usize) -> Self {
        let mut blocks = BASE_BLOCKS.to_vec();
        blocks.extend([
            ("command", 3),
            ("gait_phase", 2),
            ("q_leg", n_leg),
            ("qd_leg", n_leg),
            ("prev_leg_action", n_leg),
            ("cam", 3),
            ("cam_target", 3),
        ]);
        let layout = ObsLayout { blocks };
        assert_eq!(layout.dim(), leg_obs_dim(n_leg));
        Self {
            agent: Agent::Leg,
            layout,
            action_dim: n_leg,
        }
    }

    pub fn global(n_leg: usize, n_arm: usize) -> ObsLayout {
        let mut blocks = BASE_BLOCKS.to_vec();
        blocks.extend([
            ("command", 3),
            ("gait_phase", 2),
            ("q_joints", n_leg + n_arm),
            ("qd_joints", n_leg + n_arm),
            ("prev_leg_action", n_leg),
            ("prev_arm_action", n_arm),
            ("cam", 3),
            ("cam_target", 3),
        ]);
        let layout = ObsLayout { blocks };
        assert_eq!(layout.dim(), global_obs_dim(n_leg, n_arm));
        layout
    }
}

/// Tracking exponential shared by the momentum and velocity rewards:
/// 1 at zero error, e⁻¹ at 50% normalized error with sigma 0.25.
pub fn tracking_exp(err_sq_sum: f64, sigma: f64) -> f64 {
    (-err_sq_sum / sigma).exp()
}

/// Vertical angular-momentum tracking reward.
pub fn reward_cam(k_target_z: f64, k_z: f64, sigma: f64) -> f64 {
    let e = (k_target_z - k_z) / (1.0 + k_target_z.abs());
    tracking_exp(e * e, sigma)
}

/// Bonus for shedding horizontal angular momentum: positive only while
/// Σ k·k̇ < 0, zero whenever the horizontal magnitude is non-decreasing.
pub fn reward_dcam(k_xy: &Vector2<f64>, kdot_xy: &Vector2<f64>) -> f64 {
    -(k_xy.dot(kdot_xy)).min(0.0)
}

/// Velocity-command tracking: per-component normalized errors, summed squares
/// inside one exponential.
pub fn reward_vt(cmd: &CommandVel, actual: &Vector3<f64>, sigma: f64) -> f64 {
    let c = [cmd.vx, cmd.vy, cmd.wz];
    let mut sum = 0.0;
    for i in 0..3 {
        let e = (c[i] - actual[i]) / (1.0 + c[i].abs());
        sum += e * e;
    }
    tracking_exp(sum, sigma)
}

/// Contact-schedule adherence: (right-in-contact − left-in-contact)·schedule.
pub fn reward_cs(left_contact: bool, right_contact: bool, schedule: f64) -> f64 {
    ((right_contact as i32 - left_contact as i32) as f64) * schedule
}

/// Weighted reward components for one agent; `total` is their plain sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct RewardTerms {
    /// Task term: CAM tracking for the arm, velocity tracking for the leg.
    pub task: f64,
    /// Secondary term: momentum-shedding bonus (arm), contact schedule (leg).
    pub shaping: f64,
    pub action_rate: f64,
    pub joint_vel: f64,
    pub torque: f64,
    pub joint_limit: f64,
}

impl RewardTerms {
    pub fn total(&self) -> f64 {
        self.task + self.shaping + self.action_rate + self.joint_vel + self.torque + self.joint_limit
    }

    /// Every component multiplied by `k` — used to turn sums into means.
    pub fn scale(&self, k: f64) -> Self {
        Self {
            task: self.task * k,
            shaping: self.shaping * k,
            action_rate: self.action_rate * k,
            joint_vel: self.joint_vel * k,
            torque: self.torque * k,
            joint_limit: self.joint_limit * k,
        }
    }
}

impl std::ops::AddAssign for RewardTerms {
    fn add_assign(&mut self, o: Self) {
        self.task += o.task;
        self.shaping += o.shaping;
        self.action_rate += o.action_rate;
        self.joint_vel += o.joint_vel;
        self.torque += o.torque;
        self.joint_limit += o.joint_limit;
    }
}

/// One control-step outcome: everything the learner and the loggers need.
#[derive(Clone, Debug)]
pub struct StepResult {
    pub arm_obs: DVector<f64>,
    pub leg_obs: DVector<f64>,
    pub global_obs: DVector<f64>,
    pub arm_reward: RewardTerms,
    pub leg_reward: RewardTerms,
    pub terminated: bool,
    pub truncated: bool,
    pub grm: GrmSample,
    pub cq: CentroidalQuantities,
    /// Finite-difference horizontal momentum rate used by the shaping bonus.
    pub kdot_fd: Vector3<f64>,
    /// Analytic momentum rate logged alongside for cross-checking.
    pub kdot_analytic: Vector3<f64>,
    /// Unweighted velocity-tracking reward in [0, 1] — the headline
    /// task-progress metric.
    pub r_vt: f64,
}

pub fn sample_command(rng: &mut ChaCha8Rng, cfg: &EnvConfig) -> CommandVel {
    if rng.gen::<f64>() < cfg.zero_command_prob {
        return CommandVel::new(0.0, 0.0, 0.0);
    }
    CommandVel::new(
        rng.gen_range(cfg.vx_range.0..=cfg.vx_range.1),
        rng.gen_range(cfg.vy_range.0..=cfg.vy_range.1),
        rng.gen_range(cfg.wz_range.0..=cfg.wz_range.1),
    )
}

#[derive(Clone)]
pub struct LocomotionEnv {
    pub sim: Simulator,
    pub cfg: EnvConfig,
    pub arm_spec: AgentSpec,
    pub leg_spec: AgentSpec,
    pub global_layout: ObsLayout,
    state: SimState,
    clock: GaitClock,
    pub cmd: CommandVel,
    prev_arm_action: DVector<f64>,
    prev_leg_action: DVector<f64>,
    prev_k: Vector3<f64>,
    episode_time: f64,
    standing_height: f64,
    fired_disturbances: usize,
    terminated: bool,
    rng: ChaCha8Rng,
}

impl LocomotionEnv {
    pub fn new(model: Arc<RobotModel>, cfg: EnvConfig) -> Self {
        let n_leg = model.leg_coords().len();
        let n_arm = model.arm_coords().len();
        let arm_spec = AgentSpec::arm(n_arm);
        let leg_spec = AgentSpec::leg(n_leg);
        let global_layout = AgentSpec::global(n_leg, n_arm);
        let sim = Simulator::new(model.clone());
        let standing_height = {
            let gen = GeneralizedState::nominal(&model);
            let kin = forward_kinematics(&model, &gen);
            let low = sim
                .contacts
                .iter()
                .map(|c| kin.body_pose[c.body].transform_point(&c.offset).z)
                .fold(f64::INFINITY, f64::min);
            gen.base_pos().z - low
        };
        let state = sim.init_state(GeneralizedState::nominal(&model));
        Self {
            sim,
            cfg,
            arm_spec,
            leg_spec,
            global_layout,
            state,
            clock: GaitClock::new(0.8),
            cmd: CommandVel::default(),
            prev_arm_action: DVector::zeros(n_arm),
            prev_leg_action: DVector::zeros(n_leg),
            prev_k: Vector3::zeros(),
            episode_time: 0.0,
            standing_height,
            fired_disturbances: 0,
            terminated: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn with_mini_humanoid(cfg: EnvConfig) -> Self {
        Self::new(Arc::new(mini_humanoid().clone()), cfg)
    }

    pub fn model(&self) -> &RobotModel {
        &self.sim.model
    }

    pub fn control_dt(&self) -> f64 {
        self.cfg.dt * self.cfg.decimation as f64
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn episode_time(&self) -> f64 {
        self.episode_time
    }

    /// Fresh episode: nominal pose plus joint noise, base placed for light
    /// foot contact, new command, zeroed clock and action memory.
    pub fn reset(&mut self, seed: u64) -> StepResult {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let model = self.sim.model.clone();
        let mut gen = GeneralizedState::nominal(&model);
        for j in 0..model.n_joints() {
            gen.q[7 + j] += self.rng.gen_range(-self.cfg.reset_noise..=self.cfg.reset_noise);
        }
        let kin = forward_kinematics(&model, &gen);
        let low = self
            .sim
            .contacts
            .iter()
            .map(|c| kin.body_pose[c.body].transform_point(&c.offset).z)
            .fold(f64::INFINITY, f64::min);
        // Lowest point 0.5 mm below ground: in contact, carrying almost
        // nothing, so the first steps feel the ground without an impact.
        gen.set_base_pos(Vector3::new(0.0, 0.0, gen.base_pos().z - low - 0.0005));
        self.state = self.sim.init_state(gen);
        self.cmd = sample_command(&mut self.rng, &self.cfg);
        self.clock = GaitClock::new(self.cfg.gait_period);
        let n_arm = self.arm_spec.action_dim;
        let n_leg = self.leg_spec.action_dim;
        self.prev_arm_action = DVector::zeros(n_arm);
        self.prev_leg_action = DVector::zeros(n_leg);
        self.episode_time = 0.0;
        self.fired_disturbances = 0;
        self.terminated = false;

        let cq = CentroidalQuantities::compute(&model, &self.state.gen, &self.cmd);
        self.prev_k = cq.h.moment;
        self.result_from(cq, Vector3::zeros(), RewardTerms::default(), RewardTerms::default(), false)
    }

    /// One 100 Hz control step: residual actions tracked by the inner PD loop
    /// for `decimation` simulation steps.
    pub fn act(&mut self, arm_action: &DVector<f64>, leg_action: &DVector<f64>) -> StepResult {
        assert_eq!(arm_action.len(), self.arm_spec.action_dim);
        assert_eq!(leg_action.len(), self.leg_spec.action_dim);
        let model = self.sim.model.clone();
        let arm_action = arm_action.map(|a| a.clamp(-1.0, 1.0));
        let leg_action = leg_action.map(|a| a.clamp(-1.0, 1.0));

        let mut q_des = model.q_ref.clone();
        for (i, c) in model.leg_coords().enumerate() {
            q_des[c - 6] += self.cfg.action_scale * leg_action[i];
        }
        for (i, c) in model.arm_coords().enumerate() {
            q_des[c - 6] += self.cfg.action_scale * arm_action[i];
        }

        let (_, _, _, tau_lim) = model.joint_limits();
        let mut torque_sq_sum = DVector::zeros(model.n_joints());
        let mut failed = false;
        for _ in 0..self.cfg.decimation {
            while let Some(ev) = self.cfg.disturbances.get(self.fired_disturbances) {
                if self.state.time >= ev.time {
                    let wrench = SpatialForce::new(
                        Vector3::new(ev.torque[0], ev.torque[1], ev.torque[2]),
                        Vector3::zeros(),
                    );
                    self.state = apply_disturbance(&self.state, wrench, ev.duration);
                    self.fired_disturbances += 1;
                } else {
                    break;
                }
            }
            let q = self.state.gen.joint_q(&model);
            let qd = self.state.gen.joint_qd(&model);
            let mut tau = (&q_des - q) * self.cfg.kp - qd * self.cfg.kd;
            for j in 0..tau.len() {
                tau[j] = tau[j].clamp(-tau_lim[j], tau_lim[j]);
                torque_sq_sum[j] += tau[j] * tau[j] / self.cfg.decimation as f64;
            }
            match self.sim.step(&self.state, &tau, self.cfg.dt) {
                Ok(s) => self.state = s,
                Err(_) => {
                    failed = true;
                    break;
                }
            }
        }
        self.episode_time += self.control_dt();
        self.clock.advance(self.control_dt());

        let cq = CentroidalQuantities::compute(&model, &self.state.gen, &self.cmd);
        let kdot_fd = (cq.h.moment - self.prev_k) / self.control_dt();
        self.prev_k = cq.h.moment;

        let arm_reward = self.arm_reward(&cq, &kdot_fd, &arm_action, &torque_sq_sum);
        let leg_reward = self.leg_reward(&leg_action, &torque_sq_sum);
        self.prev_arm_action = arm_action;
        self.prev_leg_action = leg_action;

        let terminated = failed || self.state.invalid || self.check_termination();
        self.terminated = terminated;
        let (arm_reward, leg_reward) = if failed {
            (RewardTerms::default(), RewardTerms::default())
        } else {
            (arm_reward, leg_reward)
        };
        self.result_from(cq, kdot_fd, arm_reward, leg_reward, terminated)
    }

    fn arm_reward(
        &self,
        cq: &CentroidalQuantities,
        kdot_fd: &Vector3<f64>,
        action: &DVector<f64>,
        torque_sq: &DVector<f64>,
    ) -> RewardTerms {
        let cfg = &self.cfg;
        let cam = reward_cam(cq.h_ref.moment.z, cq.h.moment.z, cfg.sigma);
        let dcam = reward_dcam(&cq.h.moment.xy(), &kdot_fd.xy());
        let model = self.model();
        let coords = model.arm_coords();
        RewardTerms {
            task: cfg.w_cam * cam,
            shaping: cfg.w_dcam * dcam,
            action_rate: -cfg.w_action_rate * (action - &self.prev_arm_action).norm_squared(),
            joint_vel: -cfg.w_joint_vel * 1e-3 * self.joint_vel_sq(coords.clone()),
            torque: -cfg.w_torque * 1e-5 * self.torque_sq(coords.clone(), torque_sq),
            joint_limit: -cfg.w_joint_limit * self.limit_proximity(coords),
        }
    }

    fn leg_reward(&self, action: &DVector<f64>, torque_sq: &DVector<f64>) -> RewardTerms {
        let cfg = &self.cfg;
        let actual = Vector3::new(
            self.state.gen.base_lin_vel().x,
            self.state.gen.base_lin_vel().y,
            self.state.gen.base_ang_vel().z,
        );
        let vt = reward_vt(&self.cmd, &actual, cfg.sigma);
        let cs = reward_cs(
            self.state.contact_flags[0],
            self.state.contact_flags[1],
            self.clock.contact_schedule(),
        );
        let model = self.model();
        let coords = model.leg_coords();
        RewardTerms {
            task: cfg.w_vt * vt,
            shaping: cfg.w_cs * cs,
            action_rate: -cfg.w_action_rate * (action - &self.prev_leg_action).norm_squared(),
            joint_vel: -cfg.w_joint_vel * 1e-3 * self.joint_vel_sq(coords.clone()),
            torque: -cfg.w_torque * 1e-5 * self.torque_sq(coords.clone(), torque_sq),
            joint_limit: -cfg.w_joint_limit * self.limit_proximity(coords),
        }
    }

    fn joint_vel_sq(&self, coords: std::ops::Range<usize>) -> f64 {
        coords.map(|c| self.state.gen.qd[c] * self.state.gen.qd[c]).sum()
    }

    fn torque_sq(&self, coords: std::ops::Range<usize>, torque_sq: &DVector<f64>) -> f64 {
        coords.map(|c| torque_sq[c - 6]).sum()
    }

    /// Quadratic penalty once a joint passes 90% of the way from the range
    /// midpoint to either limit.
    fn limit_proximity(&self, coords: std::ops::Range<usize>) -> f64 {
        let (lo, hi, _, _) = self.model().joint_limits();
        coords
            .map(|c| {
                let j = c - 6;
                let mid = 0.5 * (lo[j] + hi[j]);
                let half = 0.5 * (hi[j] - lo[j]);
                let frac = ((self.state.gen.q[7 + j] - mid) / half).abs();
                let excess = (frac - 0.9).max(0.0);
                excess * excess
            })
            .sum()
    }

    pub fn check_termination(&self) -> bool {
        if self.state.invalid {
            return true;
        }
        if self.state.gen.base_pos().z < 0.45 * self.standing_height {
            return true;
        }
        // Tilt beyond 60°: the world down direction, seen from the base,
        // strays too far from the base's own -z.
        let g_b = self.state.gen.base_rot().transpose() * Vector3::new(0.0, 0.0, -1.0);
        -g_b.z < 0.5
    }

    fn result_from(
        &self,
        cq: CentroidalQuantities,
        kdot_fd: Vector3<f64>,
        arm_reward: RewardTerms,
        leg_reward: RewardTerms,
        terminated: bool,
    ) -> StepResult {
        let truncated = !terminated && self.episode_time >= self.cfg.episode_s;
        let kdot_analytic = if terminated {
            Vector3::zeros()
        } else {
            momentum_rate_bias(self.model(), &self.state.gen).moment
        };
        let actual = Vector3::new(
            self.state.gen.base_lin_vel().x,
            self.state.gen.base_lin_vel().y,
            self.state.gen.base_ang_vel().z,
        );
        let r_vt = if self.state.invalid {
            0.0
        } else {
            reward_vt(&self.cmd, &actual, self.cfg.sigma)
        };
        StepResult {
            arm_obs: self.observe_arm(&cq),
            leg_obs: self.observe_leg(&cq),
            global_obs: self.observe_global(&cq),
            arm_reward,
            leg_reward,
            terminated,
            truncated,
            grm: self.sim.grm_about_cp(&self.state),
            cq,
            kdot_fd,
            kdot_analytic,
            r_vt,
        }
    }

    fn base_blocks(&self, out: &mut Vec<f64>) {
        let gen = &self.state.gen;
        out.push(gen.base_pos().z);
        out.push(gen.yaw());
        out.extend(gen.base_lin_vel().iter());
        out.extend(gen.base_ang_vel().iter());
        let g_b = gen.base_rot().transpose() * Vector3::new(0.0, 0.0, -1.0);
        out.extend(g_b.iter());
    }

    fn cam_blocks(&self, cq: &CentroidalQuantities, out: &mut Vec<f64>) {
        let yaw = self.state.gen.yaw();
        out.extend(mixed_frame(&cq.h.moment, yaw).iter());
        out.extend(mixed_frame(&cq.h_ref.moment, yaw).iter());
    }

    fn finished(&self, mut values: Vec<f64>, dim: usize) -> DVector<f64> {
        debug_assert_eq!(values.len(), dim);
        if self.state.invalid || values.iter().any(|v| !v.is_finite()) {
            values = vec![0.0; dim];
        }
        DVector::from_vec(values)
    }

    pub fn observe_arm(&self, cq: &CentroidalQuantities) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.arm_spec.layout.dim());
        self.base_blocks(&mut v);
        for c in self.model().arm_coords() {
            v.push(self.state.gen.q[7 + (c - 6)]);
        }
        for c in self.model().arm_coords() {
            v.push(self.state.gen.qd[c]);
        }
        v.extend(self.prev_arm_action.iter());
        self.cam_blocks(cq, &mut v);
        self.finished(v, self.arm_spec.layout.dim())
    }

    pub fn observe_leg(&self, cq: &CentroidalQuantities) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.leg_spec.layout.dim());
        self.base_blocks(&mut v);
        v.extend([self.cmd.vx, self.cmd.vy, self.cmd.wz]);
        let (s, c) = self.clock.encode();
        v.extend([s, c]);
        for c in self.model().leg_coords() {
            v.push(self.state.gen.q[7 + (c - 6)]);
        }
        for c in self.model().leg_coords() {
            v.push(self.state.gen.qd[c]);
        }
        v.extend(self.prev_leg_action.iter());
        self.cam_blocks(cq, &mut v);
        self.finished(v, self.leg_spec.layout.dim())
    }

    pub fn observe_global(&self, cq: &CentroidalQuantities) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.global_layout.dim());
        self.base_blocks(&mut v);
        v.extend([self.cmd.vx, self.cmd.vy, self.cmd.wz]);
        let (s, c) = self.clock.encode();
        v.extend([s, c]);
        let model = self.model();
        for j in 0..model.n_joints() {
            v.push(self.state.gen.q[7 + j]);
        }
        for j in 0..model.n_joints() {
            v.push(self.state.gen.qd[6 + j]);
        }
        v.extend(self.prev_leg_action.iter());
        v.extend(self.prev_arm_action.iter());
        self.cam_blocks(cq, &mut v);
        self.finished(v, self.global_layout.dim())
    }
}

/// Locomotion environment seen through the multi-agent training interface:
/// agent 0 is the arm group, agent 1 the leg group, sharing one simulator
/// step per transition.
pub struct LocoMarl {
    pub env: LocomotionEnv,
    comp_sums: [RewardTerms; 2],
    comp_steps: usize,
}

impl LocoMarl {
    pub fn new(env: LocomotionEnv) -> Self {
        Self {
            env,
            comp_sums: [RewardTerms::default(); 2],
            comp_steps: 0,
        }
    }

    /// Per-agent mean reward components accumulated since the last drain,
    /// plus the step count they cover. Resets the accumulator.
    pub fn drain_reward_components(&mut self) -> ([RewardTerms; 2], usize) {
        let steps = self.comp_steps;
        let k = if steps == 0 { 0.0 } else { 1.0 / steps as f64 };
        let means = [self.comp_sums[0].scale(k), self.comp_sums[1].scale(k)];
        self.comp_sums = [RewardTerms::default(); 2];
        self.comp_steps = 0;
        (means, steps)
    }

    fn obs_from(&self, r: &StepResult) -> crate::marl::MarlObs {
        crate::marl::MarlObs {
            local: vec![r.arm_obs.clone(), r.leg_obs.clone()],
            global: r.global_obs.clone(),
        }
    }
}

impl crate::marl::MarlEnv for LocoMarl {
    fn n_agents(&self) -> usize {
        2
    }

    fn local_obs_dims(&self) -> Vec<usize> {
        vec![self.env.arm_spec.layout.dim(), self.env.leg_spec.layout.dim()]
    }

    fn global_obs_dim(&self) -> usize {
        self.env.global_layout.dim()
    }

    fn action_dims(&self) -> Vec<usize> {
        vec![self.env.arm_spec.action_dim, self.env.leg_spec.action_dim]
    }

    fn reset(&mut self, seed: u64) -> crate::marl::MarlObs {
        let r = self.env.reset(seed);
        self.obs_from(&r)
    }

    fn step(&mut self, actions: &[nalgebra::DVector<f64>]) -> crate::marl::MarlStep {
        let r = self.env.act(&actions[0], &actions[1]);
        self.comp_sums[0] += r.arm_reward;
        self.comp_sums[1] += r.leg_reward;
        self.comp_steps += 1;
        crate::marl::MarlStep {
            obs: self.obs_from(&r),
            rewards: vec![r.arm_reward.total(), r.leg_reward.total()],
            terminated: r.terminated,
            truncated: r.truncated,
            tracking: r.r_vt,
        }
    }
}
