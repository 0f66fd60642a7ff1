use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Environment, Transition};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

const PLACEMENT_RETRIES: usize = 1000;

/// Point-navigation task parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointEnvConfig {
    pub arena_half_width: f64,
    pub goal_radius: f64,
    pub hazard_count: usize,
    pub hazard_radius: f64,
    pub hazard_cost_scale: f64,
    pub max_episode_steps: usize,
    pub transition_noise_std: f64,
    pub seed: u64,
    /// Number of distinct hazard layouts episodes draw from.
    pub layout_catalog_size: usize,
    /// Per-step velocity retention.
    pub damping: f64,
    /// Velocity change produced by a unit action.
    pub accel_scale: f64,
}

impl Default for PointEnvConfig {
    fn default() -> Self {
        Self {
            arena_half_width: 1.5,
            goal_radius: 0.3,
            hazard_count: 1,
            hazard_radius: 0.5,
            hazard_cost_scale: 1.0,
            max_episode_steps: 100,
            transition_noise_std: 0.01,
            seed: 0,
            layout_catalog_size: 16,
            damping: 0.9,
            accel_scale: 0.03,
        }
    }
}

impl PointEnvConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("point env: {m}")));
        if !(self.arena_half_width > 0.0) {
            return bad("arena_half_width must be > 0");
        }
        if !(self.goal_radius > 0.0) {
            return bad("goal_radius must be > 0");
        }
        if !(self.hazard_radius > 0.0) {
            return bad("hazard_radius must be > 0");
        }
        if self.max_episode_steps < 1 {
            return bad("max_episode_steps must be >= 1");
        }
        if !(self.transition_noise_std >= 0.0) {
            return bad("transition_noise_std must be >= 0");
        }
        if !(self.hazard_cost_scale >= 0.0) {
            return bad("hazard_cost_scale must be >= 0");
        }
        if self.layout_catalog_size < 1 {
            return bad("layout_catalog_size must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.damping) {
            return bad("damping must lie in [0, 1]");
        }
        if !(self.accel_scale > 0.0) {
            return bad("accel_scale must be > 0");
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        5 + 2 * self.hazard_count
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointState {
    pub agent_position: [f64; 2],
    pub agent_velocity: [f64; 2],
    pub goal_position: [f64; 2],
    pub hazard_positions: Vec<[f64; 2]>,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: PointState,
    pub reward: f64,
    pub cost: f64,
    pub goal_reached: bool,
    pub terminal: bool,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Distance progress towards the goal plus the arrival bonus.
pub fn goal_reward(prev_distance: f64, distance: f64, goal_radius: f64) -> f64 {
    let bonus = if distance < goal_radius { 1.0 } else { 0.0 };
    prev_distance - distance + bonus
}

/// Penetration depth into the nearest hazard, scaled.
pub fn hazard_cost(nearest_distance: f64, hazard_radius: f64, scale: f64) -> f64 {
    scale * (hazard_radius - nearest_distance).max(0.0)
}

fn nearest_hazard(p: [f64; 2], hazards: &[[f64; 2]]) -> f64 {
    hazards.iter().map(|&h| dist(p, h)).fold(f64::INFINITY, f64::min)
}

fn uniform_point(rng: &mut ChaCha8Rng, half: f64) -> [f64; 2] {
    [rng.random_range(-half..=half), rng.random_range(-half..=half)]
}

fn layout(config: &PointEnvConfig, index: u64) -> Vec<[f64; 2]> {
    let mut rng = stream(config.seed, Stream::Layout, &[index]);
    // Keep hazards off the walls so they can be passed on either side.
    let inner = config.arena_half_width * 0.6;
    (0..config.hazard_count).map(|_| uniform_point(&mut rng, inner)).collect()
}

fn place_goal(
    config: &PointEnvConfig,
    hazards: &[[f64; 2]],
    agent: Option<[f64; 2]>,
    rng: &mut ChaCha8Rng,
) -> Result<[f64; 2]> {
    let clearance = config.hazard_radius + config.goal_radius;
    for _ in 0..PLACEMENT_RETRIES {
        let g = uniform_point(rng, config.arena_half_width);
        let clear = nearest_hazard(g, hazards) > clearance;
        let away = agent.is_none_or(|a| dist(a, g) > 2.0 * config.goal_radius);
        if clear && away {
            return Ok(g);
        }
    }
    Err(Error::Config("could not place goal clear of hazards".into()))
}

/// Places hazards (from the layout catalog), goal and agent for one episode.
pub fn point_reset(config: &PointEnvConfig, episode_seed: u64) -> Result<PointState> {
    config.validate()?;
    let mut rng = stream(config.seed, Stream::Reset, &[episode_seed]);
    let index = rng.random_range(0..config.layout_catalog_size as u64);
    let hazards = layout(config, index);
    let goal = place_goal(config, &hazards, None, &mut rng)?;
    for _ in 0..PLACEMENT_RETRIES {
        let a = uniform_point(&mut rng, config.arena_half_width);
        if nearest_hazard(a, &hazards) > config.hazard_radius && dist(a, goal) > config.goal_radius {
            return Ok(PointState {
                agent_position: a,
                agent_velocity: [0.0, 0.0],
                goal_position: goal,
                hazard_positions: hazards,
                t: 0,
            });
        }
    }
    Err(Error::Config("could not place agent outside hazards".into()))
}

/// Advances the double integrator by one step.
pub fn point_step(
    state: &PointState,
    action: &[f64],
    config: &PointEnvConfig,
    rng: &mut ChaCha8Rng,
) -> Result<StepResult> {
    if action.len() != 2 {
        return Err(Error::Input(format!("action must have 2 components, got {}", action.len())));
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(Error::Input("non-finite action component".into()));
    }
    let noise = if config.transition_noise_std > 0.0 {
        let n = Normal::new(0.0, config.transition_noise_std).map_err(|e| Error::Config(e.to_string()))?;
        [n.sample(rng), n.sample(rng)]
    } else {
        [0.0, 0.0]
    };
    let half = config.arena_half_width;
    let mut next = state.clone();
    for i in 0..2 {
        let a = action[i].clamp(-1.0, 1.0);
        let v = config.damping * state.agent_velocity[i] + config.accel_scale * a + noise[i];
        let p = state.agent_position[i] + v;
        if p.abs() > half {
            next.agent_position[i] = p.clamp(-half, half);
            next.agent_velocity[i] = 0.0;
        } else {
            next.agent_position[i] = p;
            next.agent_velocity[i] = v;
        }
    }
    next.t = state.t + 1;

    let d_prev = dist(state.agent_position, state.goal_position);
    let d_now = dist(next.agent_position, state.goal_position);
    let reward = goal_reward(d_prev, d_now, config.goal_radius);
    let cost = hazard_cost(
        nearest_hazard(next.agent_position, &next.hazard_positions),
        config.hazard_radius,
        config.hazard_cost_scale,
    );
    let goal_reached = d_now < config.goal_radius;
    if goal_reached {
        next.goal_position = place_goal(config, &next.hazard_positions, Some(next.agent_position), rng)?;
    }
    Ok(StepResult {
        terminal: next.t >= config.max_episode_steps,
        next_state: next,
        reward,
        cost,
        goal_reached,
    })
}

/// Stateful wrapper implementing [`Environment`].
#[derive(Debug, Clone)]
pub struct PointEnv {
    config: PointEnvConfig,
    state: Option<PointState>,
}

impl PointEnv {
    pub fn new(config: PointEnvConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, state: None })
    }

    pub fn config(&self) -> &PointEnvConfig {
        &self.config
    }

    pub fn state(&self) -> Option<&PointState> {
        self.state.as_ref()
    }

    pub fn observe(&self, s: &PointState) -> Vec<f64> {
        let p = s.agent_position;
        let mut obs = Vec::with_capacity(self.config.obs_dim());
        obs.extend_from_slice(&s.agent_velocity);
        obs.push(s.goal_position[0] - p[0]);
        obs.push(s.goal_position[1] - p[1]);
        for h in &s.hazard_positions {
            obs.push(h[0] - p[0]);
            obs.push(h[1] - p[1]);
        }
        obs.push(1.0 - s.t as f64 / self.config.max_episode_steps as f64);
        obs
    }
}

impl Environment for PointEnv {
    fn obs_dim(&self) -> usize {
        self.config.obs_dim()
    }

    fn act_dim(&self) -> usize {
        2
    }

    fn horizon(&self) -> usize {
        self.config.max_episode_steps
    }

    fn reset(&mut self, episode_seed: u64) -> Result<Vec<f64>> {
        let s = point_reset(&self.config, episode_seed)?;
        let obs = self.observe(&s);
        self.state = Some(s);
        Ok(obs)
    }

    fn step(&mut self, action: &[f64], rng: &mut ChaCha8Rng) -> Result<Transition> {
        let s = self.state.as_ref().ok_or_else(|| Error::Input("step called before reset".into()))?;
        let r = point_step(s, action, &self.config, rng)?;
        let obs = self.observe(&r.next_state);
        self.state = Some(r.next_state);
        Ok(Transition { obs, reward: r.reward, cost: r.cost, terminal: r.terminal })
    }
}
