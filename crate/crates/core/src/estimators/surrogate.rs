use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::advantages::AdvantageSet;
use super::bounds::{c_value, estimate_decomposition, eta_bar, kl_penalty, BoundHyper};
use crate::batch::EpisodeBatch;
use crate::error::{Error, Result};
use crate::funcapprox::autodiff::{grad, Real};
use crate::funcapprox::{FlatParams, GaussianPolicy, PolicyEval};

/// Per-update scalars of the cost bound, evaluated at the current policy.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SurrogateReport {
    pub e_hat: f64,
    pub e_upper: f64,
    pub e_lower: f64,
    pub total_var: f64,
    pub mv_hat: f64,
    pub vm_hat: f64,
    pub vm_sq_hat: f64,
    pub mv_tilde: f64,
    pub vm_tilde: f64,
    pub eta_bar: f64,
    pub eps_d: f64,
    pub c: f64,
    pub x_value: f64,
    pub feasible: bool,
}

/// Term-by-term value of the constraint surrogate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XBreakdown {
    pub adv_term: f64,
    pub e_lower: f64,
    pub e_upper: f64,
    pub eta_bar: f64,
    pub mv_tilde: f64,
    pub vm_tilde: f64,
    pub value: f64,
}

/// The constraint surrogate as a function of the importance ratios and the
/// mean KL, with everything else frozen from the update batch.
///
/// The ratios enter only through two linear statistics, the mean weighted
/// cost advantage and the mean-variance integrand, so gradients are exact
/// chain rules through three scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct XSurrogate {
    adv: Vec<f64>,
    n_episodes: usize,
    horizon: usize,
    hyper: BoundHyper,
    eps_d: f64,
    e_hat: f64,
    mean_abs_vd: f64,
}

impl XSurrogate {
    pub fn new(
        cost_adv: Vec<f64>,
        n_episodes: usize,
        horizon: usize,
        hyper: BoundHyper,
        e_hat: f64,
        cost_values: &[f64],
    ) -> Result<Self> {
        if cost_adv.is_empty() || n_episodes == 0 {
            return Err(Error::Input("surrogate needs a non-empty batch".into()));
        }
        let eps_d = hyper.epsilon_for(&cost_adv);
        let mean_abs_vd = if cost_values.is_empty() {
            0.0
        } else {
            cost_values.iter().map(|v| v.abs()).sum::<f64>() / cost_values.len() as f64
        };
        Ok(Self { adv: cost_adv, n_episodes, horizon, hyper, eps_d, e_hat, mean_abs_vd })
    }

    pub fn eps_d(&self) -> f64 {
        self.eps_d
    }

    pub fn hyper(&self) -> &BoundHyper {
        &self.hyper
    }

    /// Returns `(mean(ratio * A), mean((ratio - 1) A^2 + 2 ratio A k_bar + k_bar^2))`.
    pub fn statistics(&self, ratio: &[f64]) -> (f64, f64) {
        let n = self.adv.len() as f64;
        let kb = self.hyper.k_bar;
        let mut s1 = 0.0;
        let mut q = 0.0;
        for (a, r) in self.adv.iter().zip(ratio) {
            s1 += r * a;
            q += (r - 1.0) * a * a + 2.0 * r * a * kb + kb * kb;
        }
        (s1 / n, q / n)
    }

    fn evaluate<T: Real>(&self, s1: T, q: T, kl: T) -> (T, [T; 6]) {
        let h = self.horizon;
        let hf = h as f64;
        let eps = self.eps_d;
        let mu = self.hyper.mu_norm;
        let per_episode = self.adv.len() as f64 / self.n_episodes as f64;
        let slack = (kl.max(kl.lift(0.0)) / 2.0).sqrt() * (2.0 * (hf + 1.0) * eps);
        let centre = s1 + self.e_hat;
        let e_upper = centre + slack;
        let e_lower = centre - slack;
        let eta = (s1 * per_episode).abs() + kl * (eps * (hf * (hf - 1.0)).abs());
        let mv = q.abs() * (mu * hf);
        let clamp = e_lower.max(e_lower.lift(0.0)).min(e_upper);
        let vm = (eta.square() + eta * (2.0 * self.mean_abs_vd)) * mu - clamp.square();
        let value = s1 + (mv + vm) * self.hyper.k;
        (value, [s1, e_lower, e_upper, eta, mv, vm])
    }

    pub fn value(&self, ratio: &[f64], mean_kl: f64) -> f64 {
        let (s1, q) = self.statistics(ratio);
        self.evaluate(s1, q, mean_kl).0
    }

    pub fn breakdown(&self, ratio: &[f64], mean_kl: f64) -> XBreakdown {
        let (s1, q) = self.statistics(ratio);
        let (value, t) = self.evaluate(s1, q, mean_kl);
        XBreakdown {
            adv_term: t[0],
            e_lower: t[1],
            e_upper: t[2],
            eta_bar: t[3],
            mv_tilde: t[4],
            vm_tilde: t[5],
            value,
        }
    }

    /// Partial derivatives with respect to each ratio and to the mean KL.
    pub fn partials(&self, ratio: &[f64], mean_kl: f64) -> Result<(Vec<f64>, f64)> {
        let (s1, q) = self.statistics(ratio);
        let (_, g) = grad(&[s1, q, mean_kl], |x| self.evaluate(x[0], x[1], x[2]).0)?;
        let n = self.adv.len() as f64;
        let kb = self.hyper.k_bar;
        let per_ratio = self.adv.iter().map(|a| (g[0] * a + g[1] * (a * a + 2.0 * a * kb)) / n).collect();
        Ok((per_ratio, g[2]))
    }
}

/// Builds the report and the frozen surrogate for one batch.
///
/// `cost_values` are fitted cost-value predictions on every batch state.
pub fn surrogate_report(
    batch: &EpisodeBatch,
    adv: &AdvantageSet,
    cost_values: &[f64],
    hyper: &BoundHyper,
) -> Result<(SurrogateReport, XSurrogate)> {
    if cost_values.len() != batch.len() {
        return Err(Error::Input("cost values must cover the batch".into()));
    }
    let maxima = batch.episode_max_costs();
    let starts: Vec<f64> = batch.start_indices().iter().map(|&i| cost_values[i]).collect();
    let d = estimate_decomposition(&maxima, &starts)?;
    let xs = XSurrogate::new(
        adv.cost_adv.clone(),
        batch.n_episodes(),
        batch.horizon,
        *hyper,
        d.e_hat,
        cost_values,
    )?;
    let ones = vec![1.0; batch.len()];
    let b = xs.breakdown(&ones, 0.0);
    let eps = xs.eps_d();
    let c = c_value(&d, hyper, eps, 0.0, batch.horizon);
    debug_assert_eq!(kl_penalty(batch.horizon, eps, 0.0), 0.0);
    let per_episode = batch.len() as f64 / batch.n_episodes() as f64;
    let report = SurrogateReport {
        e_hat: d.e_hat,
        e_upper: b.e_upper,
        e_lower: b.e_lower,
        total_var: d.total_var,
        mv_hat: d.mv_hat,
        vm_hat: d.vm_hat,
        vm_sq_hat: d.vm_sq_hat,
        mv_tilde: b.mv_tilde,
        vm_tilde: b.vm_tilde,
        eta_bar: eta_bar(b.adv_term * per_episode, eps, 0.0, batch.horizon),
        eps_d: eps,
        c,
        x_value: b.value,
        feasible: c <= 0.0,
    };
    let all = [
        report.e_hat,
        report.e_upper,
        report.e_lower,
        report.mv_tilde,
        report.vm_tilde,
        report.c,
        report.x_value,
    ];
    if all.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite surrogate statistic".into()));
    }
    Ok((report, xs))
}

/// Gradient of the importance-sampled objective `mean(ratio * A)` at the
/// behaviour policy.
pub fn objective_gradient(
    policy: &GaussianPolicy,
    eval: &PolicyEval,
    actions: ArrayView2<f64>,
    adv: &[f64],
) -> Result<FlatParams> {
    let n = adv.len() as f64;
    let w: Vec<f64> = adv.iter().map(|a| a / n).collect();
    policy.grad_weighted_log_prob(eval, actions, &w)
}

/// Gradient of the surrogate at a policy whose ratios and mean KL are given.
/// `kl_grad` may be omitted at the behaviour policy, where it vanishes.
pub fn x_gradient(
    policy: &GaussianPolicy,
    eval: &PolicyEval,
    actions: ArrayView2<f64>,
    ratio: &[f64],
    mean_kl: f64,
    kl_grad: Option<&[f64]>,
    xs: &XSurrogate,
) -> Result<FlatParams> {
    let (d_ratio, d_kl) = xs.partials(ratio, mean_kl)?;
    let w: Vec<f64> = d_ratio.iter().zip(ratio).map(|(d, r)| d * r).collect();
    let mut g = policy.grad_weighted_log_prob(eval, actions, &w)?;
    if let Some(kg) = kl_grad {
        g.iter_mut().zip(kg).for_each(|(x, k)| *x += d_kl * k);
    }
    if !g.is_finite() {
        return Err(Error::Numeric("non-finite constraint gradient".into()));
    }
    Ok(g)
}

/// Constraint gradient `b` at the behaviour policy.
pub fn constraint_gradient(
    policy: &GaussianPolicy,
    eval: &PolicyEval,
    actions: ArrayView2<f64>,
    xs: &XSurrogate,
) -> Result<FlatParams> {
    let ones = vec![1.0; eval.rows()];
    x_gradient(policy, eval, actions, &ones, 0.0, None, xs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xs(adv: Vec<f64>, hyper: BoundHyper, e_hat: f64) -> XSurrogate {
        let n = adv.len();
        XSurrogate::new(adv, 2, n / 2, hyper, e_hat, &[0.0; 4]).unwrap()
    }

    #[test]
    fn k_zero_reduces_to_mean_advantage() {
        let hyper = BoundHyper { k: 0.0, ..Default::default() };
        let s = xs(vec![0.3, -0.1, 0.2, 0.4], hyper, 0.5);
        assert_eq!(s.value(&[1.0; 4], 0.0), (0.3 - 0.1 + 0.2 + 0.4) / 4.0);
        let r = [1.1, 0.9, 1.0, 1.2];
        assert_eq!(s.value(&r, 0.01), s.statistics(&r).0);
    }

    #[test]
    fn collapses_to_minus_k_e_squared() {
        // Advantages summing to zero per batch, unit ratios, no offset.
        let hyper = BoundHyper { k: 7.0, k_bar: 0.0, ..Default::default() };
        let s = xs(vec![0.2, -0.2, 0.1, -0.1], hyper, 0.3);
        let v = s.value(&[1.0; 4], 0.0);
        assert!((v - (0.0 - 7.0 * 0.09)).abs() < 1e-15);
    }

    #[test]
    fn partials_match_finite_differences() {
        let hyper = BoundHyper { k: 2.0, k_bar: 0.05, epsilon_d: Some(0.3), ..Default::default() };
        let s = xs(vec![0.3, -0.5, 0.2, 0.4], hyper, 0.1);
        let r = [1.05, 0.97, 1.1, 0.92];
        let kl = 0.01;
        let (dr, dk) = s.partials(&r, kl).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            let mut p = r;
            p[i] += h;
            let fp = s.value(&p, kl);
            p[i] -= 2.0 * h;
            let fm = s.value(&p, kl);
            assert!(((fp - fm) / (2.0 * h) - dr[i]).abs() < 1e-6);
        }
        let fd = (s.value(&r, kl + h) - s.value(&r, kl - h)) / (2.0 * h);
        assert!((fd - dk).abs() < 1e-5 * (1.0 + dk.abs()));
    }
}
