//! Limb-level multi-agent reinforcement learning for small humanoids, built
//! around centroidal angular momentum: spatial algebra, a kinematic-tree robot
//! model, centroidal dynamics, a penalty-contact simulator, a locomotion
//! environment with momentum-shaped rewards, a small from-scratch neural net
//! stack, multi-agent PPO in four coordination architectures, and a CLI for
//! training and analysis experiments.

pub mod centroidal;
pub mod cli;
pub mod config;
pub mod env;
pub mod marl;
pub mod model;
pub mod net;
pub mod plot;
pub mod sim;
pub mod spatial;
pub mod toy;
pub mod validate;
