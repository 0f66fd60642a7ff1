//! Invariant suites behind the `verify` command.
//!
//! Each suite returns named pass/fail results with the measured metric and
//! its threshold. Hooks let tests swap in faulty implementations to check
//! that a suite actually detects them.

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::algorithms::{
    ascpo_update, lagrangian_update, scpo_update, trpo_update, Algorithm, StepConfig, TrainConfig, Trainer,
};
use crate::batch::{EpisodeBatch, EpisodeRecord};
use crate::bench::{
    augmented_max_cost_moments, exact_moments, exact_moments_with_gamma, verify_probability_bound_with,
};
use crate::env::{GridMdp, PointEnvConfig, PolicyTable};
use crate::error::{Error, Result};
use crate::estimators::{
    compute_advantages, confidence, estimate_decomposition, x_gradient, AdvantageConfig, AdvantageSet,
    BoundHyper, XSurrogate,
};
use crate::funcapprox::FlatParams;
use crate::funcapprox::{dot, monotonic_descent_loss, mse_loss, GaussianPolicy, Mlp, MlpSpec};
use crate::mmdp::{cost_increments, hj_trajectory_max};
use crate::solver::{
    conjugate_gradient, dual_objective, kl_hessian_vector_product, solve_subproblem, CgConfig, StepMode,
    TrustRegionSubproblem,
};

pub type ConfidenceFn = Box<dyn Fn(f64, f64) -> Result<f64> + Send + Sync>;

/// Replaceable pieces of the code under test.
pub struct VerifyHooks {
    pub confidence: ConfidenceFn,
}

impl Default for VerifyHooks {
    fn default() -> Self {
        Self { confidence: Box::new(confidence) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantResult {
    pub suite: String,
    pub name: String,
    pub pass: bool,
    pub metric: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VerifyReport {
    pub results: Vec<InvariantResult>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.results.iter().all(|r| r.pass)
    }

    pub fn failing(&self) -> Vec<String> {
        self.results.iter().filter(|r| !r.pass).map(|r| format!("{}/{}", r.suite, r.name)).collect()
    }

    pub fn suite_passes(&self, suite: &str) -> bool {
        self.results.iter().filter(|r| r.suite == suite).all(|r| r.pass)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

pub const SUITES: [&str; 6] = ["mmdp", "bound", "exact", "gradients", "solver", "reductions"];

/// Runs every suite, or only `only` when given.
pub fn run_suites(only: Option<&str>, hooks: &VerifyHooks) -> Result<VerifyReport> {
    if let Some(name) = only {
        if !SUITES.contains(&name) {
            return Err(Error::Config(format!("unknown suite {name:?}; known: {}", SUITES.join(", "))));
        }
    }
    let mut report = VerifyReport::default();
    for suite in SUITES.iter().filter(|s| only.is_none_or(|o| o == **s)) {
        let results = match *suite {
            "mmdp" => mmdp_suite()?,
            "bound" => bound_suite(hooks)?,
            "exact" => exact_suite()?,
            "gradients" => gradient_suite()?,
            "solver" => solver_suite()?,
            "reductions" => reduction_suite()?,
            _ => unreachable!("suite list is fixed"),
        };
        report.results.extend(results);
    }
    Ok(report)
}

/// `pass` when `metric <= threshold`.
fn at_most(suite: &str, name: &str, metric: f64, threshold: f64) -> InvariantResult {
    InvariantResult {
        suite: suite.into(),
        name: name.into(),
        pass: metric <= threshold,
        metric,
        threshold,
        detail: String::new(),
    }
}

fn check(suite: &str, name: &str, pass: bool, detail: String) -> InvariantResult {
    InvariantResult {
        suite: suite.into(),
        name: name.into(),
        pass,
        metric: if pass { 1.0 } else { 0.0 },
        threshold: 1.0,
        detail,
    }
}

/// `|a - b| / max(|a|, |b|, 1e-6)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn mmdp_suite() -> Result<Vec<InvariantResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let mut worst_hj: f64 = 0.0;
    let mut negative = 0usize;
    for _ in 0..10_000 {
        let len = rng.random_range(1..=60);
        let costs: Vec<f64> = (0..len)
            .map(|_| match rng.random_range(0..4) {
                0 => 0.0,
                1 => rng.random_range(0.0..1.0),
                2 => rng.random_range(0.0..1e-6),
                _ => (rng.random_range(0..5) as f64) * 0.25,
            })
            .collect();
        let inc = cost_increments(&costs)?;
        negative += inc.iter().filter(|d| **d < 0.0).count();
        let sum: f64 = inc.iter().sum();
        let max = costs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max((sum - max).abs());
        worst_hj = worst_hj.max((sum - hj_trajectory_max(&costs)).abs());
    }
    Ok(vec![
        at_most("mmdp", "increment_sum_equals_max", worst, 1e-12),
        at_most("mmdp", "increment_sum_equals_hj_oracle", worst_hj, 1e-12),
        at_most("mmdp", "increments_non_negative", negative as f64, 0.0),
    ])
}

fn sample_family(name: &str, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match name {
        "gaussian" => (0..n).map(|_| StandardNormal.sample(rng)).collect(),
        "lognormal" => {
            let d = LogNormal::new(0.0, 1.0).expect("valid lognormal");
            (0..n).map(|_| d.sample(rng)).collect()
        }
        _ => {
            // Mostly near zero with a rare far component.
            let lo = Normal::new(0.0, 0.1).expect("valid normal");
            let hi = Normal::new(3.0, 0.1).expect("valid normal");
            (0..n).map(|_| if rng.random::<f64>() < 0.9 { lo.sample(rng) } else { hi.sample(rng) }).collect()
        }
    }
}

pub fn bound_suite(hooks: &VerifyHooks) -> Result<Vec<InvariantResult>> {
    let conf = &hooks.confidence;
    let mut out = Vec::new();
    let p7 = conf(7.0, 1.0)?;
    out.push(at_most("bound", "confidence_k7_psi1", (p7 - 0.98).abs(), 1e-12));
    let p0 = conf(0.0, 1.0)?;
    out.push(at_most("bound", "confidence_k0_is_zero", p0.abs(), 0.0));
    let grid: Vec<f64> = (0..50).map(|i| i as f64 * 0.2).collect();
    let mut ok = true;
    let mut prev = f64::NEG_INFINITY;
    for k in &grid {
        let p = conf(*k, 0.5)?;
        ok &= (0.0..1.0).contains(&p) && p >= prev;
        prev = p;
    }
    out.push(check("bound", "confidence_in_unit_interval_and_monotone", ok, String::new()));
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for family in ["gaussian", "lognormal", "bernoulli_mixture"] {
        let samples = sample_family(family, 100_000, &mut rng);
        for k in [0.5, 1.0, 2.0, 7.0] {
            let r = verify_probability_bound_with(&samples, k, conf)?;
            out.push(InvariantResult {
                suite: "bound".into(),
                name: format!("{family}_k{k}"),
                pass: r.pass,
                metric: r.empirical_p,
                threshold: r.nominal_p - r.slack,
                detail: format!("bound {:.6} nominal {:.6}", r.bound, r.nominal_p),
            });
        }
    }
    Ok(out)
}

/// Fixed 3-state MDP used for the Monte-Carlo convergence check.
pub fn reference_mdp() -> GridMdp {
    let n = 3;
    let na = 2;
    let mut t = vec![0.0; n * na * n];
    let rows: [[f64; 3]; 6] = [
        [0.6, 0.3, 0.1],
        [0.2, 0.5, 0.3],
        [0.1, 0.6, 0.3],
        [0.3, 0.3, 0.4],
        [0.5, 0.25, 0.25],
        [0.0, 0.2, 0.8],
    ];
    for (i, r) in rows.iter().enumerate() {
        t[i * n..(i + 1) * n].copy_from_slice(r);
    }
    let mut costs = vec![0.0; n * na * n];
    for (i, c) in costs.iter_mut().enumerate() {
        *c = [0.0, 0.2, 0.7][i % n] * if i / (na * n) == 2 { 1.5 } else { 1.0 };
    }
    let rewards: Vec<f64> = (0..n * na * n).map(|i| (i % 5) as f64 * 0.1).collect();
    GridMdp::new(n, na, t, rewards, costs, vec![0.5, 0.3, 0.2], 4).expect("reference MDP is valid")
}

pub fn exact_suite() -> Result<Vec<InvariantResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut rec, mut dec, mut aug) = (0.0_f64, 0.0_f64, 0.0_f64);
    let mut x_negative = false;
    for i in 0..20 {
        let mdp = GridMdp::random(4, 2, 1 + i % 5, &mut rng);
        let pol = PolicyTable::random(4, 2, &mut rng);
        for gamma in [0.9, 1.0] {
            let m = exact_moments_with_gamma(&mdp, &pol, gamma)?;
            rec = rec.max(m.recursion_gap());
            dec = dec.max(m.decomposition_gap());
            x_negative |= m.x_vectors.iter().flatten().any(|x| *x < 0.0);
            if gamma == 1.0 {
                let (am, av) = augmented_max_cost_moments(&mdp, &pol);
                for s in 0..4 {
                    aug = aug.max((am[s] - m.start_means[s]).abs()).max((av[s] - m.start_vars[s]).abs());
                }
            }
        }
    }
    let mut out = vec![
        at_most("exact", "recursion_matches_enumeration", rec, 1e-10),
        at_most("exact", "variance_equals_mv_plus_vm", dec, 1e-10),
        at_most("exact", "augmented_recursion_matches_enumeration", aug, 1e-10),
        check("exact", "x_non_negative", !x_negative, String::new()),
    ];

    // Coin MDP: max of two fair Bernoulli costs.
    let coin = GridMdp::new(
        2,
        1,
        vec![0.5; 4],
        vec![0.0, 1.0, 0.0, 1.0],
        vec![0.0, 1.0, 0.0, 1.0],
        vec![1.0, 0.0],
        2,
    )?;
    let m = exact_moments(&coin, &PolicyTable::uniform(2, 1))?;
    let gap = (m.e_exact - 0.75).abs()
        + (m.v_exact - 3.0 / 16.0).abs()
        + (m.mv_exact - 3.0 / 16.0).abs()
        + m.vm_exact.abs();
    out.push(at_most("exact", "coin_mdp_moments", gap, 1e-15));

    // Sample estimates converge to the exact values.
    let mdp = reference_mdp();
    let pol = PolicyTable::uniform(3, 2);
    let exact = exact_moments(&mdp, &pol)?;
    let n = 10_000;
    let mut mrng = ChaCha8Rng::seed_from_u64(304);
    let mut maxima = Vec::with_capacity(n);
    let mut starts = Vec::with_capacity(n);
    for _ in 0..n {
        let t = mdp.sample_episode(&pol, &mut mrng);
        maxima.push(hj_trajectory_max(&t.costs));
        starts.push(exact.start_means[t.states[0]]);
    }
    let d = estimate_decomposition(&maxima, &starts)?;
    let nf = n as f64;
    let se_mean = (exact.v_exact / nf).sqrt();
    let m4 = maxima.iter().map(|x| (x - d.e_hat).powi(4)).sum::<f64>() / nf;
    let se_var = ((m4 - d.total_var.powi(2)).max(0.0) / nf).sqrt();
    out.push(at_most("exact", "sample_mean_within_3se", (d.e_hat - exact.e_exact).abs(), 3.0 * se_mean));
    out.push(at_most(
        "exact",
        "sample_variance_within_3se",
        (d.total_var - exact.v_exact).abs(),
        3.0 * se_var,
    ));
    Ok(out)
}

fn random_batch(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, dim), |_| rng.random_range(-1.0..1.0))
}

fn coordinates(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<usize> {
    let mut c = rand::seq::index::sample(rng, n, count.min(n)).into_vec();
    c.sort_unstable();
    c
}

/// Largest relative error between `analytic[i]` and a central difference of
/// `f` at each coordinate in `coords`.
fn fd_worst<F>(theta: &[f64], analytic: &[f64], coords: &[usize], h: f64, mut f: F) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut worst: f64 = 0.0;
    let mut p = theta.to_vec();
    for &i in coords {
        p[i] = theta[i] + h;
        let fp = f(&p)?;
        p[i] = theta[i] - h;
        let fm = f(&p)?;
        p[i] = theta[i];
        worst = worst.max(relative_error((fp - fm) / (2.0 * h), analytic[i]));
    }
    Ok(worst)
}

pub fn gradient_suite() -> Result<Vec<InvariantResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut out = Vec::new();
    let obs = random_batch(&mut rng, 32, 4);
    let policy = GaussianPolicy::new(4, 2, vec![16, 16], -0.3, &mut rng)?;
    let theta = policy.to_flat();
    let np = theta.len();
    let mut coords = coordinates(&mut rng, np - 2, 22);
    coords.extend([np - 2, np - 1]);

    // Weighted log-likelihood.
    let eval = policy.evaluate(obs.view())?;
    let actions = random_batch(&mut rng, 32, 2);
    let weights: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
    let g = policy.grad_weighted_log_prob(&eval, actions.view(), &weights)?;
    let worst = fd_worst(&theta, &g, &coords, 1e-5, |t| {
        let e = policy.with_flat(t)?.evaluate(obs.view())?;
        Ok(GaussianPolicy::log_prob_batch(&e, actions.view()).iter().zip(&weights).map(|(l, w)| l * w).sum())
    })?;
    out.push(at_most("gradients", "policy_log_prob", worst, 1e-4));

    // Value regression losses through the network.
    let spec = MlpSpec::new(4, vec![16, 16], 1)?;
    let net = Mlp::init(spec, 1.0, &mut rng);
    let vtheta = net.to_flat();
    let targets: Vec<f64> = (0..32).map(|i| 1.0 - i as f64 / 32.0).collect();
    let ids: Vec<usize> = (0..32).map(|i| i / 8).collect();
    let vcoords = coordinates(&mut rng, vtheta.len(), 24);
    type Loss = fn(&[f64], &[f64], &[usize]) -> Result<(f64, Vec<f64>)>;
    let losses: [(&str, Loss); 2] = [
        ("value_mse", |p, t, _| mse_loss(p, t)),
        ("monotonic_descent", |p, t, ids| monotonic_descent_loss(p, t, ids, 1.0)),
    ];
    for (name, loss) in losses {
        let cache = net.forward_cached(obs.view())?;
        let pred: Vec<f64> = cache.output.iter().copied().collect();
        let (_, dl) = loss(&pred, &targets, &ids)?;
        let grad = net.backward(&cache, Array2::from_shape_vec((32, 1), dl).expect("column").view())?;
        let worst = fd_worst(&vtheta, &grad, &vcoords, 1e-5, |t| {
            let mut n2 = net.clone();
            n2.set_flat(t)?;
            let p: Vec<f64> = n2.forward(obs.view())?.iter().copied().collect();
            Ok(loss(&p, &targets, &ids)?.0)
        })?;
        out.push(at_most("gradients", name, worst, 1e-4));
    }

    // Mean KL against a fixed reference policy.
    let mut shifted = theta.0.clone();
    shifted.iter_mut().for_each(|x| *x += rng.random_range(-0.05..0.05));
    let reference = policy.with_flat(&shifted)?;
    let ref_eval = reference.evaluate(obs.view())?;
    let kg = policy.kl_grad(&ref_eval, &eval)?;
    let worst = fd_worst(&theta, &kg, &coords, 1e-5, |t| {
        Ok(GaussianPolicy::mean_kl(&ref_eval, &policy.with_flat(t)?.evaluate(obs.view())?))
    })?;
    out.push(at_most("gradients", "mean_kl", worst, 1e-4));

    // Constraint surrogate away from the behaviour policy.
    let old_logp = GaussianPolicy::log_prob_batch(&ref_eval, actions.view());
    let cost_adv: Vec<f64> = (0..32).map(|_| rng.random_range(-0.3..0.5)).collect();
    let cost_values: Vec<f64> = (0..32).map(|_| rng.random_range(0.0..1.0)).collect();
    let hyper = BoundHyper { k: 2.0, k_bar: 0.05, epsilon_d: Some(0.05), ..Default::default() };
    let xs = XSurrogate::new(cost_adv, 4, 8, hyper, 0.2, &cost_values)?;
    let measure = |p: &GaussianPolicy| -> Result<(f64, Vec<f64>, f64, crate::funcapprox::PolicyEval)> {
        let e = p.evaluate(obs.view())?;
        let r: Vec<f64> = GaussianPolicy::log_prob_batch(&e, actions.view())
            .iter()
            .zip(&old_logp)
            .map(|(n, o)| (n - o).exp())
            .collect();
        let kl = GaussianPolicy::mean_kl(&ref_eval, &e);
        Ok((xs.value(&r, kl), r, kl, e))
    };
    let (_, r, kl, e) = measure(&policy)?;
    let klg = policy.kl_grad(&ref_eval, &e)?;
    let xg = x_gradient(&policy, &e, actions.view(), &r, kl, Some(&klg), &xs)?;
    let worst = fd_worst(&theta, &xg, &coords, 1e-6, |t| Ok(measure(&policy.with_flat(t)?)?.0))?;
    out.push(at_most("gradients", "constraint_surrogate", worst, 1e-3));
    Ok(out)
}

/// Minimum of the dual by a log-spaced grid over lambda and nu followed by
/// nested golden-section refinement. Independent of the closed form.
pub fn dual_grid_oracle(q: f64, r: f64, s: f64, c: f64, delta: f64) -> f64 {
    let inner =
        |lambda: f64| -> f64 {
            let f = |nu: f64| dual_objective(q, r, s, c, delta, lambda, nu);
            let grid: Vec<f64> =
                std::iter::once(0.0).chain((0..=160).map(|i| 10f64.powf(-8.0 + i as f64 * 0.1))).collect();
            let (bi, _) = grid
                .iter()
                .enumerate()
                .map(|(i, &v)| (i, f(v)))
                .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
            let lo = if bi == 0 { 0.0 } else { grid[bi - 1] };
            let hi = grid[(bi + 1).min(grid.len() - 1)];
            golden(f, lo, hi)
        };
    let lgrid: Vec<f64> = (0..=200).map(|i| 10f64.powf(-8.0 + i as f64 * 0.08)).collect();
    let (bi, _) = lgrid.iter().enumerate().map(|(i, &l)| (i, inner(l))).fold((0, f64::INFINITY), |a, b| {
        if b.1 < a.1 {
            b
        } else {
            a
        }
    });
    let lo = lgrid[bi.saturating_sub(1)];
    let hi = lgrid[(bi + 1).min(lgrid.len() - 1)];
    golden(inner, lo, hi)
}

fn golden<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - phi * (b - a);
    let mut x2 = a + phi * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..120 {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = f(x2);
        }
    }
    f1.min(f2).min(f(a)).min(f(b))
}

fn spd(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let m: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = (0..n).map(|k| m[k * n + i] * m[k * n + j]).sum::<f64>() / n as f64;
        }
        a[i * n + i] += 0.5;
    }
    a
}

fn matvec(a: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n).map(|i| dot(&a[i * n..(i + 1) * n], v)).collect()
}

/// Small synthetic batch drawn from `policy` with hazard-like costs.
pub fn synthetic_batch(
    policy: &GaussianPolicy,
    cost: f64,
    seed: u64,
) -> Result<(EpisodeBatch, AdvantageSet, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obs_dim = policy.obs_dim();
    let mut records = Vec::new();
    for e in 0..8 {
        let mut rec = EpisodeRecord { terminal: true, ..Default::default() };
        let mut m = 0.0_f64;
        for t in 0..16 {
            let mut o: Vec<f64> = (0..obs_dim - 1).map(|_| rng.random_range(-1.0..1.0)).collect();
            o.push(m);
            let (a, lp) = policy.sample(&o, &mut rng)?;
            let c = if (t + e) % 4 == 0 { cost * (1.0 + 0.2 * (e % 3) as f64) } else { 0.0 };
            let d = (c - m).max(0.0);
            m += d;
            rec.rewards.push(a[0] - 0.5 * a[1] + 0.1 * o[0]);
            rec.obs.push(o);
            rec.actions.push(a);
            rec.costs.push(c);
            rec.increments.push(d);
            rec.log_probs.push(lp);
        }
        records.push(rec);
    }
    let batch = EpisodeBatch::from_episodes(&records, 16)?;
    let values = vec![0.0; batch.len()];
    let cost_values: Vec<f64> = batch.cost_value_targets().iter().map(|t| 0.8 * t).collect();
    let adv = compute_advantages(&batch, &AdvantageConfig::default(), &values, &cost_values, None)?;
    Ok((batch, adv, cost_values))
}

pub fn solver_suite() -> Result<Vec<InvariantResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut out = Vec::new();
    let obs = random_batch(&mut rng, 48, 3);
    let policy = GaussianPolicy::new(3, 2, vec![16, 16], -0.4, &mut rng)?;
    let eval = policy.evaluate(obs.view())?;
    let np = policy.param_count();
    let rand_vec =
        |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..np).map(|_| rng.random_range(-1.0..1.0)).collect() };

    let mut sym: f64 = 0.0;
    for _ in 0..10 {
        let u = rand_vec(&mut rng);
        let v = rand_vec(&mut rng);
        let hu = kl_hessian_vector_product(&policy, &eval, &u, 0.01)?;
        let hv = kl_hessian_vector_product(&policy, &eval, &v, 0.01)?;
        sym = sym.max((dot(&u, &hv) - dot(&v, &hu)).abs());
    }
    out.push(at_most("solver", "fvp_symmetric", sym, 1e-8));

    let theta = policy.to_flat();
    let mut fd: f64 = 0.0;
    for _ in 0..5 {
        let v = rand_vec(&mut rng);
        let hv = kl_hessian_vector_product(&policy, &eval, &v, 0.0)?;
        let eps = 1e-4;
        let grad_at = |sign: f64| -> Result<FlatParams> {
            let t: Vec<f64> = theta.iter().zip(&v).map(|(x, d)| x + sign * eps * d).collect();
            let p = policy.with_flat(&t)?;
            p.kl_grad(&eval, &p.evaluate(obs.view())?)
        };
        let (gp, gm) = (grad_at(1.0)?, grad_at(-1.0)?);
        let diff: Vec<f64> =
            gp.iter().zip(gm.iter()).zip(hv.iter()).map(|((a, b), h)| (a - b) / (2.0 * eps) - h).collect();
        fd = fd.max(FlatParams(diff).norm() / hv.norm().max(1e-12));
    }
    out.push(at_most("solver", "fvp_matches_kl_gradient_differences", fd, 1e-3));

    let a = spd(&mut rng, 100);
    let rhs: Vec<f64> = (0..100).map(|_| rng.random_range(-1.0..1.0)).collect();
    let sol =
        conjugate_gradient(|v: &[f64]| Ok(matvec(&a, v)), &rhs, &CgConfig { max_iters: 100, tol: 1e-10 })?;
    let res: Vec<f64> = matvec(&a, &sol.x).iter().zip(&rhs).map(|(x, b)| x - b).collect();
    let rel = FlatParams(res).norm() / FlatParams(rhs).norm();
    out.push(at_most("solver", "cg_residual_random_spd_100", rel, 1e-8));

    let mut gap: f64 = 0.0;
    let mut infeasible = 0usize;
    let mut solved = 0;
    while solved < 50 {
        let n = 5;
        let h = spd(&mut rng, n);
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = rng.random_range(-0.5..0.5);
        let p = TrustRegionSubproblem { g: FlatParams(g.clone()), b: FlatParams(b.clone()), c, delta: 0.02 };
        let o = solve_subproblem(&p, |v: &[f64]| Ok(matvec(&h, v)), &CgConfig { max_iters: 50, tol: 1e-12 })?;
        if o.mode == StepMode::Recovery {
            continue;
        }
        solved += 1;
        let primal = dot(&g, &o.direction);
        let oracle = dual_grid_oracle(o.q, o.r, o.s, c, 0.02);
        gap = gap.max((primal - oracle).abs());
        if c + dot(&b, &o.direction) > 1e-8 {
            infeasible += 1;
        }
    }
    out.push(at_most("solver", "dual_matches_grid_oracle", gap, 1e-4));
    out.push(at_most("solver", "feasible_steps_satisfy_linear_constraint", infeasible as f64, 0.0));

    let mut worst_kl: f64 = 0.0;
    let p2 = GaussianPolicy::new(5, 2, vec![16], -0.5, &mut rng)?;
    for (i, w) in [0.0, 0.2, 0.6, 2.0].into_iter().enumerate() {
        let (batch, adv, cv) = synthetic_batch(&p2, 0.4, 50 + i as u64)?;
        let hyper = BoundHyper { w, ..Default::default() };
        let (o, _) = ascpo_update(&p2, &batch, &adv, &cv, &hyper, &StepConfig::default())?;
        if o.accepted {
            let old = p2.evaluate(batch.obs.view())?;
            let new = o.policy.evaluate(batch.obs.view())?;
            worst_kl = worst_kl.max(GaussianPolicy::mean_kl(&old, &new));
        }
    }
    out.push(at_most("solver", "accepted_steps_within_kl", worst_kl, 0.02));
    Ok(out)
}

pub fn reduction_suite() -> Result<Vec<InvariantResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut out = Vec::new();
    let policy = GaussianPolicy::new(5, 2, vec![16], -0.5, &mut rng)?;
    let (batch, adv, cv) = synthetic_batch(&policy, 0.4, 7)?;
    let cfg = StepConfig::default();
    let hyper = BoundHyper { k: 0.0, w: 0.3, ..Default::default() };
    let (a, _) = ascpo_update(&policy, &batch, &adv, &cv, &hyper, &cfg)?;
    let (s, _) = scpo_update(&policy, &batch, &adv, &cv, &BoundHyper { k: 7.0, ..hyper }, &cfg)?;
    out.push(at_most("reductions", "k0_equals_scpo", max_abs_diff(&a.policy, &s.policy), 1e-12));

    let l = lagrangian_update(&policy, &batch, &adv, 0.0, &cfg)?;
    let t = trpo_update(&policy, &batch, &adv, &cfg)?;
    out.push(at_most(
        "reductions",
        "lagrangian_zero_multiplier_equals_trpo",
        max_abs_diff(&l.policy, &t.policy),
        1e-12,
    ));

    let (gap, _) = zero_cost_gap(3)?;
    out.push(at_most("reductions", "zero_cost_ascpo_equals_trpo", gap, 1e-10));
    Ok(out)
}

pub fn max_abs_diff(a: &GaussianPolicy, b: &GaussianPolicy) -> f64 {
    a.to_flat().iter().zip(b.to_flat().iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Trains ASCPO and TRPO side by side on a hazard-free arena and returns the
/// largest parameter gap over `iterations` plus the number of accepted steps.
pub fn zero_cost_gap(iterations: usize) -> Result<(f64, usize)> {
    let env = PointEnvConfig { hazard_count: 0, max_episode_steps: 50, ..Default::default() };
    let base = TrainConfig {
        epochs: iterations,
        steps_per_epoch: 500,
        policy_hidden: vec![16, 16],
        value_hidden: vec![16, 16],
        value_iters: 20,
        value_minibatch: 128,
        ..Default::default()
    };
    let hyper = BoundHyper { w: 0.5, ..Default::default() };
    let mut a =
        Trainer::new(env.clone(), TrainConfig { algorithm: Algorithm::Ascpo, ..base.clone() }, hyper)?;
    let mut t = Trainer::new(env, TrainConfig { algorithm: Algorithm::Trpo, ..base }, hyper)?;
    let mut gap: f64 = 0.0;
    let mut accepted = 0;
    for _ in 0..iterations {
        let ra = a.iterate()?;
        t.iterate()?;
        accepted += ra.accepted as usize;
        gap = gap.max(max_abs_diff(a.policy(), t.policy()));
    }
    Ok((gap, accepted))
}
