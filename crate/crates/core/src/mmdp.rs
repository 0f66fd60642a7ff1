//! Running-maximum cost augmentation.
//!
//! The state is extended with `M`, the largest state-wise cost seen so far in
//! the episode. Each step emits the increment `D = max(C - M, 0)` so that the
//! per-episode maximum cost becomes an additive return over increments.

use crate::error::{Error, Result};

/// Negative costs above this are treated as rounding noise and clamped to 0.
pub const NEGATIVE_COST_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub base: Vec<f64>,
    pub running_max: f64,
}

impl AugmentedState {
    /// Observation fed to networks: the base features followed by `M`.
    pub fn features(&self) -> Vec<f64> {
        let mut v = self.base.clone();
        v.push(self.running_max);
        v
    }
}

/// A transition before augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTransition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub cost: f64,
    pub next_obs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedTransition {
    pub state: AugmentedState,
    pub action: Vec<f64>,
    pub reward: f64,
    pub cost: f64,
    pub increment: f64,
    pub next_state: AugmentedState,
}

fn sanitize(cost: f64) -> Result<f64> {
    if cost.is_nan() {
        return Err(Error::Input("cost is NaN".into()));
    }
    if cost < 0.0 {
        if cost > -NEGATIVE_COST_TOLERANCE {
            log::warn!("clamping negative cost {cost:e} to zero");
            return Ok(0.0);
        }
        return Err(Error::Input(format!("negative cost {cost}")));
    }
    Ok(cost)
}

/// Streaming tracker of `M` within one episode.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Augmenter {
    running_max: f64,
}

impl Augmenter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        self.running_max = 0.0;
    }

    pub fn running_max(&self) -> f64 {
        self.running_max
    }

    /// Consumes one cost and returns its increment.
    pub fn push(&mut self, cost: f64) -> Result<f64> {
        let c = sanitize(cost)?;
        let d = (c - self.running_max).max(0.0);
        self.running_max += d;
        Ok(d)
    }
}

/// Increments for a single episode's cost sequence.
pub fn cost_increments(costs: &[f64]) -> Result<Vec<f64>> {
    let mut aug = Augmenter::new();
    costs.iter().map(|&c| aug.push(c)).collect()
}

/// Augments episodes of raw transitions; `M` restarts at 0 for every episode.
pub fn augment(episodes: &[Vec<RawTransition>]) -> Result<Vec<Vec<AugmentedTransition>>> {
    episodes
        .iter()
        .map(|ep| {
            let mut aug = Augmenter::new();
            ep.iter()
                .map(|tr| {
                    let before = aug.running_max();
                    let increment = aug.push(tr.cost)?;
                    Ok(AugmentedTransition {
                        state: AugmentedState { base: tr.obs.clone(), running_max: before },
                        action: tr.action.clone(),
                        reward: tr.reward,
                        cost: tr.cost.max(0.0),
                        increment,
                        next_state: AugmentedState {
                            base: tr.next_obs.clone(),
                            running_max: aug.running_max(),
                        },
                    })
                })
                .collect()
        })
        .collect()
}

/// Maximum state-wise cost of an episode as the sum of its increments.
pub fn episode_max_cost(increments: &[f64]) -> f64 {
    increments.iter().sum()
}

/// Direct maximum over the raw cost sequence (0 for an empty episode).
pub fn hj_trajectory_max(costs: &[f64]) -> f64 {
    costs.iter().copied().fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn increments_follow_the_recursion() {
        let d = cost_increments(&[0.1, 0.5, 0.3]).unwrap();
        assert_eq!(d.len(), 3);
        assert!((d[0] - 0.1).abs() < 1e-15);
        assert!((d[1] - 0.4).abs() < 1e-15);
        assert_eq!(d[2], 0.0);
        assert!((episode_max_cost(&d) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_and_single_step_cases() {
        assert_eq!(cost_increments(&[0.0, 0.0, 0.0]).unwrap(), vec![0.0; 3]);
        assert_eq!(cost_increments(&[0.2]).unwrap(), vec![0.2]);
        assert_eq!(episode_max_cost(&[0.0, 0.0]), 0.0);
    }

    #[test]
    fn episode_max_examples() {
        let m = |c: &[f64]| episode_max_cost(&cost_increments(c).unwrap());
        assert!((m(&[0.1, 0.5, 0.3]) - 0.5).abs() < 1e-15);
        assert!((m(&[0.1, 0.2, 0.9]) - 0.9).abs() < 1e-15);
        assert_eq!(hj_trajectory_max(&[0.1, 0.5, 0.3]), 0.5);
        assert_eq!(hj_trajectory_max(&[0.7]), 0.7);
        assert_eq!(hj_trajectory_max(&[0.4, 0.4]), 0.4);
    }

    #[test]
    fn tiny_negative_costs_are_clamped_large_ones_rejected() {
        assert_eq!(cost_increments(&[-1e-15, 0.3]).unwrap()[0], 0.0);
        assert!(matches!(cost_increments(&[-0.1]), Err(Error::Input(_))));
    }

    #[test]
    fn augment_resets_per_episode() {
        let tr = |c: f64| RawTransition {
            obs: vec![0.0],
            action: vec![0.0],
            reward: 0.0,
            cost: c,
            next_obs: vec![0.0],
        };
        let out = augment(&[vec![tr(0.3), tr(0.1)], vec![tr(0.2)]]).unwrap();
        assert_eq!(out[0][1].state.running_max, 0.3);
        assert_eq!(out[1][0].state.running_max, 0.0);
        assert_eq!(out[1][0].increment, 0.2);
        assert_eq!(out[0][1].next_state.features(), vec![0.0, 0.3]);
    }

    proptest! {
        #[test]
        fn increments_sum_to_trajectory_max(costs in prop::collection::vec(0.0f64..10.0, 1..64)) {
            let d = cost_increments(&costs).unwrap();
            prop_assert!(d.iter().all(|x| *x >= 0.0));
            prop_assert!((episode_max_cost(&d) - hj_trajectory_max(&costs)).abs() <= 1e-12);
        }

        #[test]
        fn running_max_is_monotone(costs in prop::collection::vec(0.0f64..10.0, 1..64)) {
            let mut aug = Augmenter::new();
            let mut prev = 0.0;
            for c in costs {
                aug.push(c).unwrap();
                prop_assert!(aug.running_max() >= prev);
                prev = aug.running_max();
            }
        }

        #[test]
        fn zero_costs_leave_increments_zero(n in 1usize..32) {
            let d = cost_increments(&vec![0.0; n]).unwrap();
            let again = cost_increments(&vec![0.0; n]).unwrap();
            prop_assert_eq!(d, again);
        }
    }
}
