//! Episodic environments: a continuous point-navigation task and an exactly
//! enumerable tabular MDP.

mod grid;
mod point;

pub use grid::{GridMdp, PolicyTable, Trajectory, MAX_ENUMERATED_PATHS};
pub use point::{
    goal_reward, hazard_cost, point_reset, point_step, PointEnv, PointEnvConfig, PointState, StepResult,
};

use crate::error::Result;
use rand_chacha::ChaCha8Rng;

/// One environment transition as seen by the rollout layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub cost: f64,
    pub terminal: bool,
}

/// A fixed-horizon episodic environment with externally supplied noise.
///
/// `reset` must be a pure function of the episode seed; all stochasticity
/// during the episode is drawn from the rng handed to `step`.
pub trait Environment {
    fn obs_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    fn horizon(&self) -> usize;
    fn reset(&mut self, episode_seed: u64) -> Result<Vec<f64>>;
    fn step(&mut self, action: &[f64], rng: &mut ChaCha8Rng) -> Result<Transition>;
}
