//! Training loops for ASCPO and the comparison baselines.

mod compare;
mod rollout;
mod trainer;
mod update;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use compare::{compare, CompareCell, CompareSummary};
pub use rollout::{build_pool, collect_episodes, episode_streams, run_episode};
pub use trainer::{policy_from_checkpoint, train, RunSummary, Trainer};
pub use update::{
    ascpo_update, clipped_objective, clipped_objective_weight, cpo_update, lagrange_ascent,
    lagrangian_update, pascpo_update, scpo_update, trpo_update, trust_region_step, Constraint,
    ProximalConfig, StepConfig, UpdateMode, UpdateOutcome,
};

use crate::error::{Error, Result};
use crate::solver::{CgConfig, LineSearchConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Ascpo,
    Scpo,
    Cpo,
    Trpo,
    TrpoLagrangian,
    Pascpo,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Ascpo,
        Algorithm::Scpo,
        Algorithm::Cpo,
        Algorithm::Trpo,
        Algorithm::TrpoLagrangian,
        Algorithm::Pascpo,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Ascpo => "ascpo",
            Algorithm::Scpo => "scpo",
            Algorithm::Cpo => "cpo",
            Algorithm::Trpo => "trpo",
            Algorithm::TrpoLagrangian => "trpo_lagrangian",
            Algorithm::Pascpo => "pascpo",
        }
    }

    /// Whether the algorithm fits a value net on the cost-increment stream.
    pub fn fits_increment_values(&self) -> bool {
        !matches!(self, Algorithm::Trpo | Algorithm::Cpo)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub target_kl: f64,
    pub backtrack_steps: usize,
    pub backtrack_coeff: f64,
    pub cg_iters: usize,
    pub cg_tol: f64,
    pub cg_damping: f64,
    pub policy_hidden: Vec<usize>,
    pub value_hidden: Vec<usize>,
    pub log_std_init: f64,
    pub log_std_floor: f64,
    pub value_lr: f64,
    pub value_iters: usize,
    pub value_minibatch: usize,
    /// Fraction of zero cost-value targets kept for regression.
    pub cost_zero_keep: f64,
    pub monotonic_weight: f64,
    pub lagrangian_lr: f64,
    pub proximal: ProximalConfig,
    pub seed: u64,
    pub workers: usize,
    pub checkpoint_every: usize,
    pub eval_episodes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Ascpo,
            epochs: 200,
            steps_per_epoch: 4000,
            gamma: 0.99,
            lambda: 0.97,
            target_kl: 0.02,
            backtrack_steps: 100,
            backtrack_coeff: 0.8,
            cg_iters: 20,
            cg_tol: 1e-8,
            cg_damping: 0.01,
            policy_hidden: vec![64, 64],
            value_hidden: vec![64, 64],
            log_std_init: -0.5,
            log_std_floor: -5.0,
            value_lr: 1e-3,
            value_iters: 80,
            value_minibatch: 512,
            cost_zero_keep: 0.5,
            monotonic_weight: 1.0,
            lagrangian_lr: 0.005,
            proximal: ProximalConfig::default(),
            seed: 0,
            workers: 1,
            checkpoint_every: 10,
            eval_episodes: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train: {m}")));
        if self.steps_per_epoch == 0 {
            return bad("steps_per_epoch must be > 0");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.lambda >= 0.0 && self.lambda <= 1.0) {
            return bad("gamma must lie in (0, 1] and lambda in [0, 1]");
        }
        if !(self.target_kl > 0.0) {
            return bad("target_kl must be > 0");
        }
        if self.backtrack_steps == 0 || !(self.backtrack_coeff > 0.0 && self.backtrack_coeff < 1.0) {
            return bad("backtracking needs >= 1 step and a coefficient in (0, 1)");
        }
        if self.cg_iters == 0 || !(self.cg_tol > 0.0) || !(self.cg_damping >= 0.0) {
            return bad("cg_iters >= 1, cg_tol > 0 and cg_damping >= 0 are required");
        }
        if !(self.value_lr > 0.0) || self.value_iters == 0 || self.value_minibatch == 0 {
            return bad("value fitting needs lr > 0, iters >= 1 and minibatch >= 1");
        }
        if !(0.0..=1.0).contains(&self.cost_zero_keep) {
            return bad("cost_zero_keep must lie in [0, 1]");
        }
        if !(self.monotonic_weight >= 0.0) || !(self.lagrangian_lr >= 0.0) {
            return bad("monotonic_weight and lagrangian_lr must be >= 0");
        }
        let p = &self.proximal;
        if !(p.clip > 0.0) || p.minibatch == 0 || !(p.lr > 0.0) || !(p.kl_stop > 0.0) {
            return bad("proximal settings must be positive");
        }
        if self.workers == 0 {
            return bad("workers must be >= 1");
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be >= 1");
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes must be >= 1");
        }
        if !self.log_std_init.is_finite() || !self.log_std_floor.is_finite() {
            return bad("log-std settings must be finite");
        }
        Ok(())
    }

    /// Episodes collected per iteration for episodes of length `horizon`.
    pub fn episodes_per_epoch(&self, horizon: usize) -> usize {
        self.steps_per_epoch.div_ceil(horizon.max(1)).max(2)
    }

    pub fn step_config(&self) -> StepConfig {
        StepConfig {
            target_kl: self.target_kl,
            damping: self.cg_damping,
            cg: CgConfig { max_iters: self.cg_iters, tol: self.cg_tol },
            line_search: LineSearchConfig {
                backtrack_coeff: self.backtrack_coeff,
                max_backtracks: self.backtrack_steps,
            },
            log_std_floor: self.log_std_floor,
        }
    }
}

/// One row of the per-iteration log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub steps: usize,
    pub episodes: usize,
    /// Mean episode return of the batch.
    pub j_r: f64,
    /// Mean episodic sum of costs.
    pub m_c: f64,
    /// Batch cost per step.
    pub rho_c: f64,
    /// Cost per step accumulated over training so far.
    pub cum_rho_c: f64,
    pub e_hat: f64,
    pub mv_hat: f64,
    pub vm_sq_hat: f64,
    pub eps_d: f64,
    pub c: f64,
    pub x_value: f64,
    pub x_delta: f64,
    pub reward_delta: f64,
    pub mode: UpdateMode,
    pub accepted: bool,
    pub backtracks: usize,
    pub mean_kl: f64,
    pub dual_lambda: f64,
    pub dual_nu: f64,
    pub lagrange_multiplier: f64,
    pub value_loss: f64,
    pub cost_value_loss: f64,
    /// Seconds spent on the iteration; kept out of the main log so that log
    /// stays byte-reproducible.
    pub wallclock: f64,
}

fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

impl IterationReport {
    pub const CSV_HEADER: [&'static str; 24] = [
        "iteration",
        "steps",
        "episodes",
        "j_r",
        "m_c",
        "rho_c",
        "cum_rho_c",
        "e_hat",
        "mv_hat",
        "vm_sq_hat",
        "eps_d",
        "c",
        "x_value",
        "x_delta",
        "reward_delta",
        "mode",
        "accepted",
        "backtracks",
        "mean_kl",
        "dual_lambda",
        "dual_nu",
        "lagrange_multiplier",
        "value_loss",
        "cost_value_loss",
    ];

    pub fn csv_row(&self) -> Vec<String> {
        let f = fmt_float;
        vec![
            self.iteration.to_string(),
            self.steps.to_string(),
            self.episodes.to_string(),
            f(self.j_r),
            f(self.m_c),
            f(self.rho_c),
            f(self.cum_rho_c),
            f(self.e_hat),
            f(self.mv_hat),
            f(self.vm_sq_hat),
            f(self.eps_d),
            f(self.c),
            f(self.x_value),
            f(self.x_delta),
            f(self.reward_delta),
            self.mode.as_str().to_string(),
            self.accepted.to_string(),
            self.backtracks.to_string(),
            f(self.mean_kl),
            f(self.dual_lambda),
            f(self.dual_nu),
            f(self.lagrange_multiplier),
            f(self.value_loss),
            f(self.cost_value_loss),
        ]
    }
}
