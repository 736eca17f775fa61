//! Plain-text `key = value` configuration for the locomotion environment and
//! training runs. Unknown keys are rejected so typos fail loudly; every field
//! has a documented default, and `to_text` writes the resolved config back
//! out so runs are self-describing.

use std::fmt::Write as _;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DisturbanceEvent {
    /// Episode time at which the torque starts acting (s).
    pub time: f64,
    /// World-aligned torque on the base (N·m).
    pub torque: [f64; 3],
    /// How long it acts (s).
    pub duration: f64,
}

#[derive(Clone, Debug)]
pub struct EnvConfig {
    /// Robot description; `None` loads the bundled mini humanoid.
    pub model_path: Option<PathBuf>,
    /// Inner simulation step (s).
    pub dt: f64,
    /// Simulation steps per policy step.
    pub decimation: usize,
    /// Reward temperature for the tracking exponentials.
    pub sigma: f64,
    /// Episode length before truncation (s).
    pub episode_s: f64,
    /// Gait period (s).
    pub gait_period: f64,
    /// Residual action scale (rad).
    pub action_scale: f64,
    /// Joint PD gains.
    pub kp: f64,
    pub kd: f64,
    /// Uniform joint noise at reset (rad).
    pub reset_noise: f64,
    /// Command ranges and the stand-still fraction.
    pub vx_range: (f64, f64),
    pub vy_range: (f64, f64),
    pub wz_range: (f64, f64),
    pub zero_command_prob: f64,
    /// Reward weights.
    pub w_vt: f64,
    pub w_cs: f64,
    pub w_cam: f64,
    pub w_dcam: f64,
    pub w_action_rate: f64,
    pub w_joint_vel: f64,
    pub w_torque: f64,
    pub w_joint_limit: f64,
    /// Scheduled base disturbances.
    pub disturbances: Vec<DisturbanceEvent>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            model_path: None,
            dt: 1e-3,
            decimation: 10,
            sigma: 0.25,
            episode_s: 10.0,
            gait_period: 0.8,
            action_scale: 0.5,
            kp: 200.0,
            kd: 4.0,
            reset_noise: 0.05,
            vx_range: (-0.8, 1.3),
            vy_range: (-0.4, 0.4),
            wz_range: (-1.0, 1.0),
            zero_command_prob: 0.1,
            w_vt: 1.0,
            w_cs: 0.3,
            w_cam: 0.5,
            w_dcam: 0.05,
            w_action_rate: 0.01,
            w_joint_vel: 1.0,
            w_torque: 1.0,
            w_joint_limit: 1.0,
            disturbances: Vec::new(),
        }
    }
}

#[derive(Error, Debug)]
pub enum ConfigError {
    #[error("line {0}: expected `key = value`, got `{1}`")]
    Syntax(usize, String),
    #[error("line {0}: unknown key `{1}`")]
    UnknownKey(usize, String),
    #[error("line {0}: bad value for `{1}`: {2}")]
    BadValue(usize, String, String),
}

fn parse_f64(line: usize, key: &str, v: &str) -> Result<f64, ConfigError> {
    v.trim()
        .parse()
        .map_err(|e| ConfigError::BadValue(line, key.into(), format!("{e}")))
}

fn parse_range(line: usize, key: &str, v: &str) -> Result<(f64, f64), ConfigError> {
    let parts: Vec<&str> = v.split(',').collect();
    if parts.len() != 2 {
        return Err(ConfigError::BadValue(
            line,
            key.into(),
            "expected `lo,hi`".into(),
        ));
    }
    let lo = parse_f64(line, key, parts[0])?;
    let hi = parse_f64(line, key, parts[1])?;
    if lo > hi {
        return Err(ConfigError::BadValue(line, key.into(), "lo > hi".into()));
    }
    Ok((lo, hi))
}

impl EnvConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = EnvConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let n = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax(n, raw.to_string()))?;
            let key = key.trim();
            let value = value.trim();
            match key {
                "model" => cfg.model_path = Some(PathBuf::from(value)),
                "dt" => cfg.dt = parse_f64(n, key, value)?,
                "decimation" => {
                    cfg.decimation = parse_f64(n, key, value)? as usize;
                    if cfg.decimation == 0 {
                        return Err(ConfigError::BadValue(n, key.into(), "must be >= 1".into()));
                    }
                }
                "sigma" => cfg.sigma = parse_f64(n, key, value)?,
                "episode_s" => cfg.episode_s = parse_f64(n, key, value)?,
                "gait_period" => cfg.gait_period = parse_f64(n, key, value)?,
                "action_scale" => cfg.action_scale = parse_f64(n, key, value)?,
                "kp" => cfg.kp = parse_f64(n, key, value)?,
                "kd" => cfg.kd = parse_f64(n, key, value)?,
                "reset_noise" => cfg.reset_noise = parse_f64(n, key, value)?,
                "vx_range" => cfg.vx_range = parse_range(n, key, value)?,
                "vy_range" => cfg.vy_range = parse_range(n, key, value)?,
                "wz_range" => cfg.wz_range = parse_range(n, key, value)?,
                "zero_command_prob" => cfg.zero_command_prob = parse_f64(n, key, value)?,
                "w_vt" => cfg.w_vt = parse_f64(n, key, value)?,
                "w_cs" => cfg.w_cs = parse_f64(n, key, value)?,
                "w_cam" => cfg.w_cam = parse_f64(n, key, value)?,
                "w_dcam" => cfg.w_dcam = parse_f64(n, key, value)?,
                "w_action_rate" => cfg.w_action_rate = parse_f64(n, key, value)?,
                "w_joint_vel" => cfg.w_joint_vel = parse_f64(n, key, value)?,
                "w_torque" => cfg.w_torque = parse_f64(n, key, value)?,
                "w_joint_limit" => cfg.w_joint_limit = parse_f64(n, key, value)?,
                "disturbance" => {
                    let parts: Vec<&str> = value.split(',').collect();
                    if parts.len() != 5 {
                        return Err(ConfigError::BadValue(
                            n,
                            key.into(),
                            "expected `time,tx,ty,tz,duration`".into(),
                        ));
                    }
                    cfg.disturbances.push(DisturbanceEvent {
                        time: parse_f64(n, key, parts[0])?,
                        torque: [
                            parse_f64(n, key, parts[1])?,
                            parse_f64(n, key, parts[2])?,
                            parse_f64(n, key, parts[3])?,
                        ],
                        duration: parse_f64(n, key, parts[4])?,
                    });
                }
                other => return Err(ConfigError::UnknownKey(n, other.to_string())),
            }
        }
        Ok(cfg)
    }

    /// Resolved config as parseable text (defaults included), so a run
    /// directory fully describes the run.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(p) = &self.model_path {
            let _ = writeln!(s, "model = {}", p.display());
        }
        let _ = writeln!(s, "dt = {}", self.dt);
        let _ = writeln!(s, "decimation = {}", self.decimation);
        let _ = writeln!(s, "sigma = {}", self.sigma);
        let _ = writeln!(s, "episode_s = {}", self.episode_s);
        let _ = writeln!(s, "gait_period = {}", self.gait_period);
        let _ = writeln!(s, "action_scale = {}", self.action_scale);
        let _ = writeln!(s, "kp = {}", self.kp);
        let _ = writeln!(s, "kd = {}", self.kd);
        let _ = writeln!(s, "reset_noise = {}", self.reset_noise);
        let _ = writeln!(s, "vx_range = {},{}", self.vx_range.0, self.vx_range.1);
        let _ = writeln!(s, "vy_range = {},{}", self.vy_range.0, self.vy_range.1);
        let _ = writeln!(s, "wz_range = {},{}", self.wz_range.0, self.wz_range.1);
        let _ = writeln!(s, "zero_command_prob = {}", self.zero_command_prob);
        let _ = writeln!(s, "w_vt = {}", self.w_vt);
        let _ = writeln!(s, "w_cs = {}", self.w_cs);
        let _ = writeln!(s, "w_cam = {}", self.w_cam);
        let _ = writeln!(s, "w_dcam = {}", self.w_dcam);
        let _ = writeln!(s, "w_action_rate = {}", self.w_action_rate);
        let _ = writeln!(s, "w_joint_vel = {}", self.w_joint_vel);
        let _ = writeln!(s, "w_torque = {}", self.w_torque);
        let _ = writeln!(s, "w_joint_limit = {}", self.w_joint_limit);
        for d in &self.disturbances {
            let _ = writeln!(
                s,
                "disturbance = {},{},{},{},{}",
                d.time, d.torque[0], d.torque[1], d.torque[2], d.duration
            );
        }
        s
    }
}
