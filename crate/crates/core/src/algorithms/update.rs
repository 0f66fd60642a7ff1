//! One policy update per algorithm, given a batch with fitted value nets.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::batch::EpisodeBatch;
use crate::error::{Error, Result};
use crate::estimators::{
    constraint_gradient, objective_gradient, surrogate_report, AdvantageSet, BoundHyper, SurrogateReport,
    XSurrogate,
};
use crate::funcapprox::{Adam, FlatParams, GaussianPolicy};
use crate::solver::{
    kl_hessian_vector_product, line_search, solve_subproblem, Acceptance, CgConfig, LineSearchConfig,
    SearchCriteria, StepMode, TrustRegionSubproblem,
};

/// Settings shared by the trust-region updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    pub target_kl: f64,
    pub damping: f64,
    pub cg: CgConfig,
    pub line_search: LineSearchConfig,
    pub log_std_floor: f64,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            target_kl: 0.02,
            damping: 0.01,
            cg: CgConfig::default(),
            line_search: LineSearchConfig::default(),
            log_std_floor: -5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    Unconstrained,
    Feasible,
    Recovery,
    FirstOrder,
    /// The update raised a solver or estimator error; the policy is unchanged.
    Skipped,
}

impl UpdateMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            UpdateMode::Unconstrained => "unconstrained",
            UpdateMode::Feasible => "feasible",
            UpdateMode::Recovery => "recovery",
            UpdateMode::FirstOrder => "first_order",
            UpdateMode::Skipped => "skipped",
        }
    }
}

impl From<StepMode> for UpdateMode {
    fn from(m: StepMode) -> Self {
        match m {
            StepMode::Unconstrained => UpdateMode::Unconstrained,
            StepMode::Feasible => UpdateMode::Feasible,
            StepMode::Recovery => UpdateMode::Recovery,
        }
    }
}

/// Result of one update. `policy` equals the input policy on rejection.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOutcome {
    pub policy: GaussianPolicy,
    pub mode: UpdateMode,
    pub accepted: bool,
    pub backtracks: usize,
    pub mean_kl: f64,
    pub x_delta: f64,
    /// Change of the importance-sampled reward surrogate.
    pub reward_delta: f64,
    pub lambda: f64,
    pub nu: f64,
    /// Constraint value handed to the solver (0 when unconstrained).
    pub c: f64,
}

/// Constraint seen by the solver: a frozen surrogate and its value at the
/// behaviour policy.
pub struct Constraint<'a> {
    pub surrogate: &'a XSurrogate,
    pub c: f64,
}

fn ratios(old_logp: &[f64], new_logp: &[f64]) -> Vec<f64> {
    old_logp.iter().zip(new_logp).map(|(o, n)| (n - o).exp()).collect()
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Natural-gradient step with an optional single constraint, followed by the
/// backtracking line search.
pub fn trust_region_step(
    policy: &GaussianPolicy,
    batch: &EpisodeBatch,
    reward_adv: &[f64],
    constraint: Option<Constraint<'_>>,
    cfg: &StepConfig,
) -> Result<UpdateOutcome> {
    let actions = batch.actions.view();
    let old = policy.evaluate(batch.obs.view())?;
    let old_logp = GaussianPolicy::log_prob_batch(&old, actions);
    let g = objective_gradient(policy, &old, actions, reward_adv)?;
    let (b, c) = match &constraint {
        Some(k) => (constraint_gradient(policy, &old, actions, k.surrogate)?, k.c),
        None => (FlatParams::zeros(g.len()), -1.0),
    };
    let problem = TrustRegionSubproblem { g, b, c, delta: cfg.target_kl };
    let hvp = |v: &[f64]| kl_hessian_vector_product(policy, &old, v, cfg.damping).map(|f| f.0);
    let sol = solve_subproblem(&problem, hvp, &cfg.cg)?;

    let ones = vec![1.0; batch.len()];
    let base_reward = mean(reward_adv);
    let base_x = constraint.as_ref().map(|k| k.surrogate.value(&ones, 0.0));
    let criteria = SearchCriteria {
        max_kl: cfg.target_kl,
        x_limit: constraint.as_ref().map(|k| (-k.c).max(0.0)),
        require_improvement: sol.mode != StepMode::Recovery,
    };
    let theta = policy.to_flat();
    let measure = |candidate: &[f64]| -> Result<Acceptance> {
        let p = policy.with_flat(candidate)?;
        let new = match p.evaluate(batch.obs.view()) {
            Ok(e) => e,
            Err(e) if e.is_numeric() => {
                return Ok(Acceptance { kl: f64::NAN, x_delta: f64::NAN, reward_delta: f64::NAN })
            }
            Err(e) => return Err(e),
        };
        let r = ratios(&old_logp, &GaussianPolicy::log_prob_batch(&new, actions));
        let kl = GaussianPolicy::mean_kl(&old, &new);
        let reward = r.iter().zip(reward_adv).map(|(x, a)| x * a).sum::<f64>() / r.len() as f64;
        let x_delta = match (&constraint, base_x) {
            (Some(k), Some(bx)) => k.surrogate.value(&r, kl) - bx,
            _ => 0.0,
        };
        log::trace!("candidate kl {kl:.3e} x_delta {x_delta:.3e} reward_delta {:.3e}", reward - base_reward);
        Ok(Acceptance { kl, x_delta, reward_delta: reward - base_reward })
    };
    log::trace!("mode {:?} q {:.3e} r {:.3e} s {:.3e} c {:.3e}", sol.mode, sol.q, sol.r, sol.s, c);
    let ls = line_search(&theta, &sol.direction, &cfg.line_search, &criteria, measure)?;
    let mut next = policy.with_flat(&ls.theta)?;
    if ls.accepted {
        next.clamp_log_std(cfg.log_std_floor);
    }
    Ok(UpdateOutcome {
        policy: next,
        mode: sol.mode.into(),
        accepted: ls.accepted,
        backtracks: ls.backtracks,
        mean_kl: if ls.accepted { ls.measured.kl } else { 0.0 },
        x_delta: if ls.accepted { ls.measured.x_delta } else { 0.0 },
        reward_delta: if ls.accepted { ls.measured.reward_delta } else { 0.0 },
        lambda: sol.lambda,
        nu: sol.nu,
        c,
    })
}

/// Unconstrained natural-gradient step.
pub fn trpo_update(
    policy: &GaussianPolicy,
    batch: &EpisodeBatch,
    adv: &AdvantageSet,
    cfg: &StepConfig,
) -> Result<UpdateOutcome> {
    trust_region_step(policy, batch, &adv.reward_adv, None, cfg)
}

/// Step under the variance-augmented bound on the maximum state-wise cost.
/// `cost_values` are the fitted cost-value predictions on the batch.
pub fn ascpo_update(
    policy: &GaussianPolicy,
    batch: &EpisodeBatch,
    adv: &AdvantageSet,
    cost_values: &[f64],
    hyper: &BoundHyper,
    cfg: &StepConfig,
) -> Result<(UpdateOutcome, SurrogateReport)> {
    let (report, xs) = surrogate_report(batch, adv, cost_values, hyper)?;
    let out = trust_region_step(
        policy,
        batch,
        &adv.reward_adv,
        Some(Constraint { surrogate: &xs, c: report.c }),
        cfg,
    )?;
    Ok((out, report))
}

/// The `k = 0` special case of [`ascpo_update`].
pub fn scpo_update(
    policy: &GaussianPolicy,
    batch: &EpisodeBatch,
    adv: &AdvantageSet,
    cost_values: &[f64],
    hyper: &BoundHyper,
    cfg: &StepConfig,
) -> Result<(UpdateOutcome, SurrogateReport)> {
    ascpo_update(policy, batch, adv, cost_values, &BoundHyper { k: 0.0, ..*hyper }, cfg)
}

/// Linear constraint on the discounted raw cost. `cost_adv` are advantages
/// of the raw cost stream and `c` is the mean discounted episodic cost minus
/// the limit.
pub fn cpo_update(
    policy: &GaussianPolicy,
    batch: &EpisodeBatch,
    reward_adv: &[f64],
    cost_adv: &[f64],
    c: f64,
    cfg: &StepConfig,
) -> Result<UpdateOutcome> {
    let linear = BoundHyper { k: 0.0, ..Default::default() };
    let xs = XSurrogate::new(cost_adv.to_vec(), batch.n_episodes(), batch.horizon, linear, 0.0, &[])?;
    trust_region_step(policy, batch, reward_adv, Some(Constraint { surrogate: &xs, c }), cfg)
}

/// Multiplier ascent `lambda <- max(0, lambda + lr (e_hat - w))`.
pub fn lagrange_ascent(lambda: f64, lr: f64, e_hat: f64, w: f64) -> f64 {
    (lambda + lr * (e_hat - w)).max(0.0)
}

/// Natural-gradient step on the penalised objective `A - lambda A_D`.
pub fn lagrangian_update(
    policy: &GaussianPolicy,
    batch: &EpisodeBatch,
    adv: &AdvantageSet,
    lambda: f64,
    cfg: &StepConfig,
) -> Result<UpdateOutcome> {
    let penalised: Vec<f64> = adv.reward_adv.iter().zip(&adv.cost_adv).map(|(a, d)| a - lambda * d).collect();
    trust_region_step(policy, batch, &penalised, None, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProximalConfig {
    pub clip: f64,
    pub minibatch: usize,
    pub passes: usize,
    pub lr: f64,
    /// Passes stop once the mean KL exceeds `kl_stop * target_kl`.
    pub kl_stop: f64,
}

impl Default for ProximalConfig {
    fn default() -> Self {
        Self { clip: 0.2, minibatch: 64, passes: 40, lr: 3e-4, kl_stop: 1.5 }
    }
}

/// Per-sample weight on `grad log pi` of the clipped objective
/// `min(r A, clip(r, 1 - eps, 1 + eps) A)`.
pub fn clipped_objective_weight(ratio: f64, adv: f64, clip: f64) -> f64 {
    let unclipped_active = if adv >= 0.0 { ratio <= 1.0 + clip } else { ratio >= 1.0 - clip };
    if unclipped_active {
        ratio * adv
    } else {
        0.0
    }
}

/// Clipped-surrogate objective value.
pub fn clipped_objective(ratio: &[f64], adv: &[f64], clip: f64) -> f64 {
    let total: f64 =
        ratio.iter().zip(adv).map(|(r, a)| (r * a).min(r.clamp(1.0 - clip, 1.0 + clip) * a)).sum();
    total / ratio.len() as f64
}

fn gather_rows(x: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    x.select(ndarray::Axis(0), rows)
}

/// First-order update: Adam ascent on the clipped objective minus
/// `lambda` times the constraint surrogate, over minibatch passes.
#[allow(clippy::too_many_arguments)]
pub fn pascpo_update<R: Rng>(
    policy: &GaussianPolicy,
    batch: &EpisodeBatch,
    adv: &AdvantageSet,
    cost_values: &[f64],
    hyper: &BoundHyper,
    lambda: f64,
    prox: &ProximalConfig,
    adam: &mut Adam,
    target_kl: f64,
    log_std_floor: f64,
    rng: &mut R,
) -> Result<(UpdateOutcome, SurrogateReport)> {
    let (report, xs) = surrogate_report(batch, adv, cost_values, hyper)?;
    let n = batch.len();
    let old = policy.evaluate(batch.obs.view())?;
    let old_logp = GaussianPolicy::log_prob_batch(&old, batch.actions.view());
    let ones = vec![1.0; n];
    let base_x = xs.value(&ones, 0.0);
    let mut current = policy.clone();
    let mut theta = policy.to_flat().0;
    let mut order: Vec<usize> = (0..n).collect();
    let mb = prox.minibatch.max(1);
    let mut passes_done = 0;
    for _ in 0..prox.passes {
        let eval = current.evaluate(batch.obs.view())?;
        let ratio = ratios(&old_logp, &GaussianPolicy::log_prob_batch(&eval, batch.actions.view()));
        let kl = GaussianPolicy::mean_kl(&old, &eval);
        if kl > prox.kl_stop * target_kl {
            break;
        }
        let (d_ratio, _) = xs.partials(&ratio, kl)?;
        order.shuffle(rng);
        for chunk in order.chunks(mb) {
            let mut rows = chunk.to_vec();
            rows.sort_unstable();
            let obs = gather_rows(&batch.obs, &rows);
            let acts = gather_rows(&batch.actions, &rows);
            let e = current.evaluate(obs.view())?;
            let lp = GaussianPolicy::log_prob_batch(&e, acts.view());
            let m = rows.len() as f64;
            let scale = n as f64 / m;
            // Descent weights on grad log pi for the loss -objective + lambda X.
            let w: Vec<f64> = rows
                .iter()
                .zip(&lp)
                .map(|(&i, l)| {
                    let r = (l - old_logp[i]).exp();
                    let obj = clipped_objective_weight(r, adv.reward_adv[i], prox.clip) / m;
                    -obj + lambda * scale * d_ratio[i] * r
                })
                .collect();
            let grad = current.grad_weighted_log_prob(&e, acts.view(), &w)?;
            if !grad.is_finite() {
                return Err(Error::Numeric("non-finite proximal gradient".into()));
            }
            adam.step(&mut theta, &grad);
            current.set_flat(&theta)?;
            current.clamp_log_std(log_std_floor);
            theta = current.to_flat().0;
        }
        passes_done += 1;
    }
    let eval = current.evaluate(batch.obs.view())?;
    let ratio = ratios(&old_logp, &GaussianPolicy::log_prob_batch(&eval, batch.actions.view()));
    let kl = GaussianPolicy::mean_kl(&old, &eval);
    let reward_delta = clipped_objective(&ratio, &adv.reward_adv, prox.clip) - mean(&adv.reward_adv);
    Ok((
        UpdateOutcome {
            policy: current,
            mode: UpdateMode::FirstOrder,
            accepted: passes_done > 0,
            backtracks: passes_done,
            mean_kl: kl,
            x_delta: xs.value(&ratio, kl) - base_x,
            reward_delta,
            lambda,
            nu: 0.0,
            c: report.c,
        },
        report,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batch::EpisodeRecord;
    use crate::estimators::{compute_advantages, AdvantageConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(cost: f64) -> (GaussianPolicy, EpisodeBatch, AdvantageSet, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let policy = GaussianPolicy::new(3, 2, vec![8], -0.5, &mut rng).unwrap();
        let mut records = Vec::new();
        for e in 0..6 {
            let k = 12;
            let mut rec = EpisodeRecord { terminal: true, ..Default::default() };
            let mut m = 0.0_f64;
            for t in 0..k {
                let o = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), m];
                let (a, lp) = policy.sample(&o, &mut rng).unwrap();
                let c = if (t + e) % 5 == 0 { cost * (1.0 + 0.1 * e as f64) } else { 0.0 };
                let d = (c - m).max(0.0);
                m += d;
                rec.rewards.push(a[0] - 0.3 * a[1] + rng.random_range(-0.1..0.1));
                rec.obs.push(o);
                rec.actions.push(a);
                rec.costs.push(c);
                rec.increments.push(d);
                rec.log_probs.push(lp);
            }
            records.push(rec);
        }
        let batch = EpisodeBatch::from_episodes(&records, 12).unwrap();
        let values = vec![0.0; batch.len()];
        let cost_values: Vec<f64> = batch.cost_value_targets().iter().map(|t| 0.5 * t).collect();
        let adv =
            compute_advantages(&batch, &AdvantageConfig::default(), &values, &cost_values, None).unwrap();
        (policy, batch, adv, cost_values)
    }

    #[test]
    fn k_zero_matches_scpo_bitwise() {
        let (p, b, adv, cv) = setup(0.4);
        let hyper = BoundHyper { k: 0.0, w: 0.5, ..Default::default() };
        let cfg = StepConfig::default();
        let (a, ra) = ascpo_update(&p, &b, &adv, &cv, &hyper, &cfg).unwrap();
        let (s, rs) = scpo_update(&p, &b, &adv, &cv, &BoundHyper { k: 3.0, ..hyper }, &cfg).unwrap();
        assert_eq!(a.policy.to_flat(), s.policy.to_flat());
        assert_eq!(ra, rs);
    }

    #[test]
    fn zero_cost_matches_trpo() {
        let (p, b, adv, _) = setup(0.0);
        let zeros = vec![0.0; b.len()];
        let cfg = StepConfig::default();
        let hyper = BoundHyper { w: 0.5, ..Default::default() };
        let (a, _) = ascpo_update(&p, &b, &adv, &zeros, &hyper, &cfg).unwrap();
        let t = trpo_update(&p, &b, &adv, &cfg).unwrap();
        assert!(a.accepted);
        assert_eq!(a.mode, UpdateMode::Unconstrained);
        let diff = a
            .policy
            .to_flat()
            .iter()
            .zip(t.policy.to_flat().iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff <= 1e-10);
    }

    #[test]
    fn accepted_steps_respect_trust_region_and_constraint() {
        let (p, b, adv, cv) = setup(0.4);
        for w in [0.0, 0.3, 2.0] {
            let hyper = BoundHyper { w, ..Default::default() };
            let (out, rep) = ascpo_update(&p, &b, &adv, &cv, &hyper, &StepConfig::default()).unwrap();
            if out.accepted {
                assert!(out.mean_kl <= 0.02);
                assert!(out.x_delta <= (-rep.c).max(0.0));
            } else {
                assert_eq!(out.policy, p);
            }
        }
    }

    #[test]
    fn lagrangian_with_zero_multiplier_is_trpo() {
        let (p, b, adv, _) = setup(0.3);
        let cfg = StepConfig::default();
        let l = lagrangian_update(&p, &b, &adv, 0.0, &cfg).unwrap();
        let t = trpo_update(&p, &b, &adv, &cfg).unwrap();
        assert_eq!(l.policy, t.policy);
    }

    #[test]
    fn multiplier_ascent() {
        assert_eq!(lagrange_ascent(0.0, 0.005, 0.0, 0.0), 0.0);
        assert!((lagrange_ascent(0.1, 0.005, 1.0, 0.0) - 0.105).abs() < 1e-15);
        assert_eq!(lagrange_ascent(0.001, 0.005, 0.0, 1.0), 0.0);
    }

    #[test]
    fn clip_with_unit_ratio_is_unclipped() {
        let adv = [0.3, -0.2, 1.5];
        let r = [1.0; 3];
        assert_eq!(clipped_objective(&r, &adv, 0.2), (0.3 - 0.2 + 1.5) / 3.0);
        assert_eq!(clipped_objective_weight(1.3, 1.0, 0.2), 0.0);
        assert_eq!(clipped_objective_weight(1.3, -1.0, 0.2), -1.3);
        assert_eq!(clipped_objective_weight(0.7, -1.0, 0.2), 0.0);
    }

    #[test]
    fn cpo_and_scpo_differ_only_through_the_constraint_stream() {
        let (p, b, adv, cv) = setup(0.4);
        let cfg = StepConfig::default();
        let hyper = BoundHyper { k: 0.0, ..Default::default() };
        let (s, rep) = scpo_update(&p, &b, &adv, &cv, &hyper, &cfg).unwrap();
        // Same stream, same c: identical step.
        let c = cpo_update(&p, &b, &adv.reward_adv, &adv.cost_adv, rep.c, &cfg).unwrap();
        assert_eq!(s.policy, c.policy);
        // Swapping in the raw cost stream changes the direction.
        let raw: Vec<f64> = b.costs.iter().map(|x| x - 0.05).collect();
        let c2 = cpo_update(&p, &b, &adv.reward_adv, &raw, rep.c, &cfg).unwrap();
        assert_ne!(c2.policy, s.policy);
    }

    #[test]
    fn pascpo_stays_near_trust_region() {
        let (p, b, adv, cv) = setup(0.4);
        let mut adam = Adam::new(p.param_count(), 3e-4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let prox = ProximalConfig { passes: 5, minibatch: 16, ..Default::default() };
        let (out, _) = pascpo_update(
            &p,
            &b,
            &adv,
            &cv,
            &BoundHyper::default(),
            0.5,
            &prox,
            &mut adam,
            0.02,
            -5.0,
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.mode, UpdateMode::FirstOrder);
        assert!(out.accepted);
        assert!(out.policy.to_flat().is_finite());
        assert_ne!(out.policy, p);
    }
}
