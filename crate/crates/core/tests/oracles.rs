//! Library results against independent reference computations.

use ascpo_core::batch::EpisodeSpan;
use ascpo_core::bench::{augmented_max_cost_moments, exact_moments_with_gamma};
use ascpo_core::env::{GridMdp, PolicyTable};
use ascpo_core::estimators::gae;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `A_t = sum_l (gamma lambda)^l delta_{t+l}` written out term by term.
fn gae_by_sum(signal: &[f64], values: &[f64], tail: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = signal.len();
    let value_at = |i: usize| if i < n { values[i] } else { tail };
    let deltas: Vec<f64> = (0..n).map(|i| signal[i] + gamma * value_at(i + 1) - values[i]).collect();
    (0..n).map(|t| (t..n).map(|i| (gamma * lambda).powi((i - t) as i32) * deltas[i]).sum()).collect()
}

/// Per-step `(signal, value)` pairs and the bootstrap value of a truncated
/// episode (`None` = terminal).
type Episode = (Vec<(f64, f64)>, Option<f64>);

fn episodes() -> impl Strategy<Value = Vec<Episode>> {
    let step = (-2.0..2.0f64, -2.0..2.0f64);
    let episode = (prop::collection::vec(step, 1..12), prop::option::of(-3.0..3.0f64));
    prop::collection::vec(episode, 1..5)
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn gae_matches_the_explicit_sum(eps in episodes(), gamma in 0.5..1.0f64, lambda in 0.0..1.0f64) {
        let mut signal = Vec::new();
        let mut values = Vec::new();
        let mut spans = Vec::new();
        let mut boots = Vec::new();
        for (steps, boot) in &eps {
            let start = signal.len();
            signal.extend(steps.iter().map(|s| s.0));
            values.extend(steps.iter().map(|s| s.1));
            spans.push(EpisodeSpan { start, end: signal.len(), terminal: boot.is_none() });
            boots.push(boot.unwrap_or(0.0));
        }
        let (adv, ret) = gae(&signal, &values, &spans, Some(&boots), gamma, lambda).unwrap();
        for (span, boot) in spans.iter().zip(&boots) {
            let r = span.range();
            let tail = if span.terminal { 0.0 } else { *boot };
            let want = gae_by_sum(&signal[r.clone()], &values[r.clone()], tail, gamma, lambda);
            for (i, w) in r.zip(want) {
                prop_assert!((adv[i] - w).abs() <= 1e-10 * (1.0 + w.abs()));
                prop_assert!((ret[i] - adv[i] - values[i]).abs() <= 1e-12);
            }
        }
    }
}

/// Depth-first walk over every path; accumulates per-start moments of the
/// maximum cost and of the discounted H-step return.
struct PathMoments {
    max1: f64,
    max2: f64,
    ret1: f64,
    ret2: f64,
}

/// State of a partial path during the walk.
#[derive(Clone, Copy)]
struct Node {
    state: usize,
    depth: usize,
    prob: f64,
    max_cost: f64,
    ret: f64,
    disc: f64,
}

fn walk(mdp: &GridMdp, pi: &PolicyTable, gamma: f64, node: Node, acc: &mut PathMoments) {
    if node.depth == mdp.horizon {
        acc.max1 += node.prob * node.max_cost;
        acc.max2 += node.prob * node.max_cost * node.max_cost;
        acc.ret1 += node.prob * node.ret;
        acc.ret2 += node.prob * node.ret * node.ret;
        return;
    }
    let s = node.state;
    for a in 0..mdp.n_actions {
        for s2 in 0..mdp.n_states {
            let prob = node.prob * pi.prob(s, a) * mdp.p(s, a, s2);
            if prob == 0.0 {
                continue;
            }
            let next = Node {
                state: s2,
                depth: node.depth + 1,
                prob,
                max_cost: node.max_cost.max(mdp.cost(s, a, s2)),
                ret: node.ret + node.disc * mdp.reward(s, a, s2),
                disc: node.disc * gamma,
            };
            walk(mdp, pi, gamma, next, acc);
        }
    }
}

fn dfs_oracle(mdp: &GridMdp, pi: &PolicyTable, gamma: f64) -> Vec<PathMoments> {
    (0..mdp.n_states)
        .map(|state| {
            let mut acc = PathMoments { max1: 0.0, max2: 0.0, ret1: 0.0, ret2: 0.0 };
            // Costs are non-negative, so 0 is a valid running-max seed.
            let root = Node { state, depth: 0, prob: 1.0, max_cost: 0.0, ret: 0.0, disc: 1.0 };
            walk(mdp, pi, gamma, root, &mut acc);
            acc
        })
        .collect()
}

fn fixture() -> (GridMdp, PolicyTable) {
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let mdp = GridMdp::random(4, 2, 4, &mut rng);
    let pi = PolicyTable::random(4, 2, &mut rng);
    (mdp, pi)
}

/// DFS oracle outputs for [`fixture`], frozen.
const FROZEN_E: f64 = 7.297_319_830_382_449e-1;
const FROZEN_V: f64 = 4.585_324_999_731_377e-2;

#[test]
fn exact_moments_match_path_dfs() {
    let (mdp, pi) = fixture();
    let gamma = 0.9;
    let lib = exact_moments_with_gamma(&mdp, &pi, gamma).unwrap();
    let oracle = dfs_oracle(&mdp, &pi, gamma);
    let mu = &mdp.initial;
    let e: f64 = mu.iter().zip(&oracle).map(|(m, o)| m * o.max1).sum();
    let second: f64 = mu.iter().zip(&oracle).map(|(m, o)| m * o.max2).sum();
    let v = second - e * e;
    assert!((lib.e_exact - e).abs() < 1e-12);
    assert!((lib.v_exact - v).abs() < 1e-12);
    assert!((e - FROZEN_E).abs() < 1e-12, "frozen E drifted: {e:.17e}");
    assert!((v - FROZEN_V).abs() < 1e-12, "frozen V drifted: {v:.17e}");
    for (s, o) in oracle.iter().enumerate() {
        let var_ret = o.ret2 - o.ret1 * o.ret1;
        assert!((lib.x_vectors[mdp.horizon][s] - var_ret).abs() < 1e-10);
        assert!((lib.start_means[s] - o.max1).abs() < 1e-12);
    }
}

#[test]
fn augmentation_recursion_matches_path_dfs() {
    let (mdp, pi) = fixture();
    let (means, vars) = augmented_max_cost_moments(&mdp, &pi);
    for (s, o) in dfs_oracle(&mdp, &pi, 1.0).iter().enumerate() {
        assert!((means[s] - o.max1).abs() < 1e-12);
        assert!((vars[s] - (o.max2 - o.max1 * o.max1)).abs() < 1e-12);
    }
}
