//! Per-step rollout records grouped by episode.

use ndarray::Array2;

use crate::error::{Error, Result};

/// One episode as produced by a rollout worker.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeRecord {
    /// Augmented observations (base features followed by the running max).
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub costs: Vec<f64>,
    pub increments: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub terminal: bool,
}

impl EpisodeRecord {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn episode_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn episode_cost(&self) -> f64 {
        self.costs.iter().sum()
    }

    pub fn max_statewise_cost(&self) -> f64 {
        self.increments.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeSpan {
    pub start: usize,
    pub end: usize,
    pub terminal: bool,
}

impl EpisodeSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

/// Flat step arrays with episode boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeBatch {
    pub obs: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Vec<f64>,
    pub costs: Vec<f64>,
    pub increments: Vec<f64>,
    pub old_log_prob: Vec<f64>,
    pub episodes: Vec<EpisodeSpan>,
    /// Nominal episode length used by the horizon-dependent bound terms.
    pub horizon: usize,
}

impl EpisodeBatch {
    pub fn from_episodes(records: &[EpisodeRecord], horizon: usize) -> Result<Self> {
        let n: usize = records.iter().map(EpisodeRecord::len).sum();
        let first = records
            .iter()
            .find(|r| !r.is_empty())
            .ok_or_else(|| Error::Input("batch needs at least one non-empty episode".into()))?;
        let obs_dim = first.obs[0].len();
        let act_dim = first.actions[0].len();
        let mut obs = Vec::with_capacity(n * obs_dim);
        let mut actions = Vec::with_capacity(n * act_dim);
        let mut batch = Self {
            obs: Array2::zeros((0, obs_dim)),
            actions: Array2::zeros((0, act_dim)),
            rewards: Vec::with_capacity(n),
            costs: Vec::with_capacity(n),
            increments: Vec::with_capacity(n),
            old_log_prob: Vec::with_capacity(n),
            episodes: Vec::with_capacity(records.len()),
            horizon,
        };
        for r in records {
            let k = r.len();
            if r.obs.len() != k
                || r.actions.len() != k
                || r.costs.len() != k
                || r.increments.len() != k
                || r.log_probs.len() != k
            {
                return Err(Error::Input("episode record fields have unequal lengths".into()));
            }
            if k == 0 {
                continue;
            }
            let start = batch.rewards.len();
            for (o, a) in r.obs.iter().zip(&r.actions) {
                if o.len() != obs_dim || a.len() != act_dim {
                    return Err(Error::Input("inconsistent observation/action width".into()));
                }
                obs.extend_from_slice(o);
                actions.extend_from_slice(a);
            }
            batch.rewards.extend_from_slice(&r.rewards);
            batch.costs.extend_from_slice(&r.costs);
            batch.increments.extend_from_slice(&r.increments);
            batch.old_log_prob.extend_from_slice(&r.log_probs);
            batch.episodes.push(EpisodeSpan { start, end: start + k, terminal: r.terminal });
        }
        batch.obs = Array2::from_shape_vec((n, obs_dim), obs).map_err(|e| Error::Input(e.to_string()))?;
        batch.actions =
            Array2::from_shape_vec((n, act_dim), actions).map_err(|e| Error::Input(e.to_string()))?;
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn n_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn episode_ids(&self) -> Vec<usize> {
        let mut ids = vec![0; self.len()];
        for (e, span) in self.episodes.iter().enumerate() {
            ids[span.range()].iter_mut().for_each(|x| *x = e);
        }
        ids
    }

    pub fn start_indices(&self) -> Vec<usize> {
        self.episodes.iter().map(|s| s.start).collect()
    }

    pub fn episode_returns(&self) -> Vec<f64> {
        self.episodes.iter().map(|s| self.rewards[s.range()].iter().sum()).collect()
    }

    pub fn episode_costs(&self) -> Vec<f64> {
        self.episodes.iter().map(|s| self.costs[s.range()].iter().sum()).collect()
    }

    /// Per-episode maximum state-wise cost, as the sum of increments.
    pub fn episode_max_costs(&self) -> Vec<f64> {
        self.episodes.iter().map(|s| self.increments[s.range()].iter().sum()).collect()
    }

    /// Remaining increment sum from each step to its episode end: the
    /// largest future increase of the running maximum.
    pub fn cost_value_targets(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for s in &self.episodes {
            let mut acc = 0.0;
            for i in s.range().rev() {
                acc += self.increments[i];
                out[i] = acc;
            }
        }
        out
    }

    /// Discounted cost-to-go on the raw cost stream.
    pub fn discounted_cost_to_go(&self, gamma: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for s in &self.episodes {
            let mut acc = 0.0;
            for i in s.range().rev() {
                acc = self.costs[i] + gamma * acc;
                out[i] = acc;
            }
        }
        out
    }
}
