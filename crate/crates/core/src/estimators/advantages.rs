use serde::{Deserialize, Serialize};

use crate::batch::{EpisodeBatch, EpisodeSpan};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvantageConfig {
    pub gamma: f64,
    pub lambda: f64,
    /// Discount on the cost-increment stream; 1 keeps it an undiscounted sum.
    pub cost_gamma: f64,
    pub standardize_reward: bool,
}

impl Default for AdvantageConfig {
    fn default() -> Self {
        Self { gamma: 0.99, lambda: 0.97, cost_gamma: 1.0, standardize_reward: true }
    }
}

/// Per-step advantages and importance ratios for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageSet {
    pub reward_adv: Vec<f64>,
    pub cost_adv: Vec<f64>,
    /// Lambda-returns used as regression targets for the reward value net.
    pub reward_targets: Vec<f64>,
    pub ratio: Vec<f64>,
    pub reward_standardized: bool,
    pub cost_standardized: bool,
}

/// Generalised advantage estimation over episode spans.
///
/// `bootstrap[e]` is the value after the last step of episode `e`; terminal
/// episodes use 0 and non-terminal ones must supply it.
pub fn gae(
    signal: &[f64],
    values: &[f64],
    episodes: &[EpisodeSpan],
    bootstrap: Option<&[f64]>,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if signal.len() != values.len() {
        return Err(Error::Input("value predictions must align with the batch".into()));
    }
    let mut adv = vec![0.0; signal.len()];
    let mut ret = vec![0.0; signal.len()];
    for (e, span) in episodes.iter().enumerate() {
        let mut next_value = if span.terminal {
            0.0
        } else {
            bootstrap
                .and_then(|b| b.get(e).copied())
                .ok_or_else(|| Error::Input(format!("episode {e} is truncated but has no bootstrap value")))?
        };
        let mut acc = 0.0;
        for i in span.range().rev() {
            let delta = signal[i] + gamma * next_value - values[i];
            acc = delta + gamma * lambda * acc;
            adv[i] = acc;
            ret[i] = acc + values[i];
            next_value = values[i];
        }
    }
    Ok((adv, ret))
}

/// Shifts to zero mean and, when the spread is not degenerate, unit std.
pub fn standardize(x: &mut [f64]) {
    if x.is_empty() {
        return;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let scale = if std > 1e-8 { 1.0 / std } else { 1.0 };
    x.iter_mut().for_each(|v| *v = (*v - mean) * scale);
}

/// Reward advantages on the reward stream and cost advantages on the
/// increment stream. Cost advantages are never standardised.
pub fn compute_advantages(
    batch: &EpisodeBatch,
    cfg: &AdvantageConfig,
    values: &[f64],
    cost_values: &[f64],
    bootstrap: Option<(&[f64], &[f64])>,
) -> Result<AdvantageSet> {
    let (mut reward_adv, reward_targets) =
        gae(&batch.rewards, values, &batch.episodes, bootstrap.map(|b| b.0), cfg.gamma, cfg.lambda)?;
    let (cost_adv, _) = gae(
        &batch.increments,
        cost_values,
        &batch.episodes,
        bootstrap.map(|b| b.1),
        cfg.cost_gamma,
        cfg.lambda,
    )?;
    if cfg.standardize_reward {
        standardize(&mut reward_adv);
    }
    if reward_adv.iter().chain(&cost_adv).any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite advantage".into()));
    }
    Ok(AdvantageSet {
        ratio: vec![1.0; batch.len()],
        reward_adv,
        cost_adv,
        reward_targets,
        reward_standardized: cfg.standardize_reward,
        cost_standardized: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batch::EpisodeRecord;

    fn batch(rewards: &[f64], terminal: bool) -> EpisodeBatch {
        let k = rewards.len();
        EpisodeBatch::from_episodes(
            &[EpisodeRecord {
                obs: vec![vec![0.0]; k],
                actions: vec![vec![0.0]; k],
                rewards: rewards.to_vec(),
                costs: vec![0.0; k],
                increments: vec![0.0; k],
                log_probs: vec![0.0; k],
                terminal,
            }],
            k,
        )
        .unwrap()
    }

    fn raw(gamma: f64, lambda: f64) -> AdvantageConfig {
        AdvantageConfig { gamma, lambda, cost_gamma: 1.0, standardize_reward: false }
    }

    #[test]
    fn zero_rewards_zero_values_give_zero() {
        let b = batch(&[0.0; 5], true);
        let a = compute_advantages(&b, &AdvantageConfig::default(), &[0.0; 5], &[0.0; 5], None).unwrap();
        assert!(a.reward_adv.iter().chain(&a.cost_adv).all(|x| *x == 0.0));
        assert!(a.reward_standardized && !a.cost_standardized);
    }

    #[test]
    fn single_step_unit_reward() {
        let b = batch(&[1.0], true);
        let a = compute_advantages(&b, &raw(1.0, 1.0), &[0.0], &[0.0], None).unwrap();
        assert_eq!(a.reward_adv, vec![1.0]);
    }

    #[test]
    fn truncated_episode_needs_bootstrap() {
        let b = batch(&[1.0, 1.0], false);
        assert!(matches!(
            compute_advantages(&b, &raw(0.9, 0.9), &[0.0; 2], &[0.0; 2], None),
            Err(Error::Input(_))
        ));
        let a = compute_advantages(&b, &raw(0.5, 1.0), &[0.0; 2], &[0.0; 2], Some((&[2.0], &[0.0]))).unwrap();
        assert_eq!(a.reward_adv, vec![1.0 + 0.5 + 0.5, 1.0 + 1.0]);
    }

    #[test]
    fn lambda_one_gives_monte_carlo_returns() {
        let b = batch(&[1.0, 2.0, 3.0], true);
        let v = [0.5, -0.2, 0.1];
        let a = compute_advantages(&b, &raw(0.9, 1.0), &v, &[0.0; 3], None).unwrap();
        let g0 = 1.0 + 0.9 * 2.0 + 0.81 * 3.0;
        assert!((a.reward_adv[0] - (g0 - 0.5)).abs() < 1e-12);
        assert!((a.reward_targets[0] - g0).abs() < 1e-12);
    }

    #[test]
    fn standardize_handles_constant_input() {
        let mut x = vec![2.0; 4];
        standardize(&mut x);
        assert_eq!(x, vec![0.0; 4]);
        let mut y = vec![1.0, 3.0];
        standardize(&mut y);
        assert_eq!(y, vec![-1.0, 1.0]);
    }
}
