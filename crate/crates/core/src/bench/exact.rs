use serde::{Deserialize, Serialize};

use crate::env::{GridMdp, PolicyTable};
use crate::error::{Error, Result};
use crate::mmdp::hj_trajectory_max;

/// Exact moments of the maximum state-wise cost and of the discounted return
/// of a tabular MDP under a fixed policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactMoments {
    /// Expected maximum state-wise cost.
    pub e_exact: f64,
    /// Its variance.
    pub v_exact: f64,
    /// Expected per-start variance.
    pub mv_exact: f64,
    /// Variance over starts of the per-start mean.
    pub vm_exact: f64,
    pub start_means: Vec<f64>,
    pub start_vars: Vec<f64>,
    pub gamma: f64,
    /// Policy-averaged transition matrix, row-major `[s][s']`.
    pub p_hat: Vec<f64>,
    /// Per-state return variance over `h` remaining steps, `h = 0..=H`, from
    /// the backward recursion.
    pub x_vectors: Vec<Vec<f64>>,
    /// One-step variance sources of the recursion, `h = 0..=H` (index 0 is 0).
    pub omega_vectors: Vec<Vec<f64>>,
    /// The same variances computed by enumerating every path.
    pub x_enumerated: Vec<Vec<f64>>,
}

impl ExactMoments {
    /// Largest absolute gap between the recursion and enumeration.
    pub fn recursion_gap(&self) -> f64 {
        self.x_vectors
            .iter()
            .flatten()
            .zip(self.x_enumerated.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `|V - (MV + VM)|`.
    pub fn decomposition_gap(&self) -> f64 {
        (self.v_exact - self.mv_exact - self.vm_exact).abs()
    }
}

fn policy_average(
    mdp: &GridMdp,
    policy: &PolicyTable,
    f: impl Fn(usize, usize, usize) -> f64,
    s: usize,
) -> f64 {
    let mut acc = 0.0;
    for a in 0..mdp.n_actions {
        let pa = policy.prob(s, a);
        for s2 in 0..mdp.n_states {
            acc += pa * mdp.p(s, a, s2) * f(s, a, s2);
        }
    }
    acc
}

/// Backward recursion `X^h = Omega^h + gamma^2 P_hat X^{h-1}` on the reward
/// table, returning `(V^h, X^h, Omega^h)` for `h = 0..=H`.
#[allow(clippy::type_complexity)]
fn variance_recursion(
    mdp: &GridMdp,
    policy: &PolicyTable,
    gamma: f64,
    p_hat: &[f64],
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = mdp.n_states;
    let mut v = vec![vec![0.0; n]];
    let mut x = vec![vec![0.0; n]];
    let mut omega = vec![vec![0.0; n]];
    for h in 1..=mdp.horizon {
        let prev_v = &v[h - 1];
        let vh: Vec<f64> = (0..n)
            .map(|s| policy_average(mdp, policy, |s, a, s2| mdp.reward(s, a, s2) + gamma * prev_v[s2], s))
            .collect();
        let om: Vec<f64> = (0..n)
            .map(|s| {
                policy_average(
                    mdp,
                    policy,
                    |s, a, s2| (mdp.reward(s, a, s2) + gamma * prev_v[s2] - vh[s]).powi(2),
                    s,
                )
            })
            .collect();
        let prev_x = &x[h - 1];
        let xh: Vec<f64> = (0..n)
            .map(|s| om[s] + gamma * gamma * (0..n).map(|s2| p_hat[s * n + s2] * prev_x[s2]).sum::<f64>())
            .collect();
        v.push(vh);
        x.push(xh);
        omega.push(om);
    }
    (v, x, omega)
}

pub fn exact_moments(mdp: &GridMdp, policy: &PolicyTable) -> Result<ExactMoments> {
    exact_moments_with_gamma(mdp, policy, 1.0)
}

/// Moments by exhaustive enumeration plus the backward variance recursion
/// with discount `gamma` on the reward table.
pub fn exact_moments_with_gamma(mdp: &GridMdp, policy: &PolicyTable, gamma: f64) -> Result<ExactMoments> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Input("gamma must lie in (0, 1]".into()));
    }
    let n = mdp.n_states;
    let horizon = mdp.horizon;
    let mut p_hat = vec![0.0; n * n];
    for s in 0..n {
        for a in 0..mdp.n_actions {
            for s2 in 0..n {
                p_hat[s * n + s2] += policy.prob(s, a) * mdp.p(s, a, s2);
            }
        }
    }
    let (_, x_vectors, omega_vectors) = variance_recursion(mdp, policy, gamma, &p_hat);

    let mut start_means = vec![0.0; n];
    let mut start_vars = vec![0.0; n];
    // [h][s] first and second moments of the h-step discounted return.
    let mut m1 = vec![vec![0.0; n]; horizon + 1];
    let mut m2 = vec![vec![0.0; n]; horizon + 1];
    for s0 in 0..n {
        let mut single = mdp.clone();
        single.initial = (0..n).map(|s| if s == s0 { 1.0 } else { 0.0 }).collect();
        let paths = single.enumerate_trajectories(policy, horizon)?;
        let (mut d1, mut d2) = (0.0, 0.0);
        for (t, p) in &paths {
            let d = hj_trajectory_max(&t.costs);
            d1 += p * d;
            d2 += p * d * d;
            let mut g = 0.0;
            let mut disc = 1.0;
            for h in 1..=horizon {
                g += disc * t.rewards[h - 1];
                disc *= gamma;
                m1[h][s0] += p * g;
                m2[h][s0] += p * g * g;
            }
        }
        start_means[s0] = d1;
        start_vars[s0] = (d2 - d1 * d1).max(0.0);
    }
    let x_enumerated: Vec<Vec<f64>> =
        (0..=horizon).map(|h| (0..n).map(|s| (m2[h][s] - m1[h][s].powi(2)).max(0.0)).collect()).collect();

    let mu = &mdp.initial;
    let e_exact: f64 = mu.iter().zip(&start_means).map(|(m, e)| m * e).sum();
    let mv_exact: f64 = mu.iter().zip(&start_vars).map(|(m, v)| m * v).sum();
    let vm_exact: f64 = mu.iter().zip(&start_means).map(|(m, e)| m * (e - e_exact).powi(2)).sum();
    let second: f64 =
        mu.iter().zip(start_means.iter().zip(&start_vars)).map(|(m, (e, v))| m * (v + e * e)).sum();
    let v_exact = (second - e_exact * e_exact).max(0.0);
    Ok(ExactMoments {
        e_exact,
        v_exact,
        mv_exact,
        vm_exact,
        start_means,
        start_vars,
        gamma,
        p_hat,
        x_vectors,
        omega_vectors,
        x_enumerated,
    })
}

/// Per-start mean and variance of the maximum state-wise cost via the
/// running-maximum augmentation: a backward recursion over `(s, M)` with
/// reward `max(C - M, 0)` and no discount.
pub fn augmented_max_cost_moments(mdp: &GridMdp, policy: &PolicyTable) -> (Vec<f64>, Vec<f64>) {
    let mut levels: Vec<f64> = mdp.costs.iter().copied().chain(std::iter::once(0.0)).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let level_of = |m: f64| levels.partition_point(|&l| l < m);
    let n = mdp.n_states;
    let nl = levels.len();
    let mut mean = vec![0.0; n * nl];
    let mut second = vec![0.0; n * nl];
    for _ in 0..mdp.horizon {
        let mut next_mean = vec![0.0; n * nl];
        let mut next_second = vec![0.0; n * nl];
        for s in 0..n {
            for (li, &m) in levels.iter().enumerate() {
                let (mut e1, mut e2) = (0.0, 0.0);
                for a in 0..mdp.n_actions {
                    let pa = policy.prob(s, a);
                    for s2 in 0..n {
                        let p = pa * mdp.p(s, a, s2);
                        if p == 0.0 {
                            continue;
                        }
                        let c = mdp.cost(s, a, s2);
                        let d = (c - m).max(0.0);
                        let k = s2 * nl + level_of(m.max(c));
                        e1 += p * (d + mean[k]);
                        e2 += p * (d * d + 2.0 * d * mean[k] + second[k]);
                    }
                }
                next_mean[s * nl + li] = e1;
                next_second[s * nl + li] = e2;
            }
        }
        mean = next_mean;
        second = next_second;
    }
    let zero = level_of(0.0);
    let means: Vec<f64> = (0..n).map(|s| mean[s * nl + zero]).collect();
    let vars = (0..n).map(|s| (second[s * nl + zero] - means[s].powi(2)).max(0.0)).collect();
    (means, vars)
}
