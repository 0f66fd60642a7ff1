use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters of the probabilistic cost bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundHyper {
    /// Probability factor multiplying the variance surrogate.
    pub k: f64,
    /// Variance floor, used only to report the nominal confidence.
    pub psi: f64,
    /// Stand-in for the infinity norm of the state-distribution ratio.
    pub mu_norm: f64,
    /// Magnitude of the advantage offset inside the mean-variance term.
    pub k_bar: f64,
    /// Fixed cost-advantage bound; `None` estimates it from each batch.
    pub epsilon_d: Option<f64>,
    /// Cost threshold on the maximum state-wise cost.
    pub w: f64,
}

impl Default for BoundHyper {
    fn default() -> Self {
        Self { k: 7.0, psi: 1.0, mu_norm: 1.0, k_bar: 0.02, epsilon_d: None, w: 0.0 }
    }
}

impl BoundHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("hyper: {m}")));
        if !(self.k >= 0.0) {
            return bad("k must be >= 0");
        }
        if !(self.psi > 0.0) {
            return bad("psi must be > 0");
        }
        if !(self.mu_norm > 0.0) {
            return bad("mu_norm must be > 0");
        }
        if !(self.k_bar >= 0.0) {
            return bad("k_bar must be >= 0");
        }
        if let Some(e) = self.epsilon_d {
            if !(e >= 0.0) {
                return bad("epsilon_d must be >= 0");
            }
        }
        if !self.w.is_finite() {
            return bad("w must be finite");
        }
        Ok(())
    }

    /// The cost-advantage bound for a batch: the override, or the largest
    /// absolute cost advantage floored at 1e-8.
    pub fn epsilon_for(&self, cost_adv: &[f64]) -> f64 {
        self.epsilon_d.unwrap_or_else(|| cost_adv.iter().fold(0.0_f64, |m, a| m.max(a.abs())).max(1e-8))
    }
}

/// Confidence that the maximum state-wise cost stays below mean + k * variance
/// when the variance is at least `psi`.
pub fn confidence(k: f64, psi: f64) -> Result<f64> {
    if !(psi > 0.0) {
        return Err(Error::Input(format!("psi must be > 0, got {psi}")));
    }
    if !(k >= 0.0) {
        return Err(Error::Input(format!("k must be >= 0, got {k}")));
    }
    Ok(1.0 - 1.0 / (k * k * psi + 1.0))
}

/// Sample mean of the per-episode maximum cost and its variance split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub e_hat: f64,
    pub total_var: f64,
    pub mv_hat: f64,
    pub vm_hat: f64,
    /// Mean of the squared cost value at episode starts.
    pub vm_sq_hat: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Splits the sample variance of episode maxima into a mean-variance part and
/// a variance-mean part, using the fitted cost value at each episode start.
pub fn estimate_decomposition(episode_max: &[f64], start_values: &[f64]) -> Result<Decomposition> {
    if episode_max.len() < 2 {
        return Err(Error::Estimation("need at least two episodes to estimate a variance".into()));
    }
    if start_values.len() != episode_max.len() {
        return Err(Error::Input("one start value per episode is required".into()));
    }
    let (e_hat, total_var) = mean_var(episode_max);
    let (_, vm_hat) = mean_var(start_values);
    let vm_sq_hat = start_values.iter().map(|v| v * v).sum::<f64>() / start_values.len() as f64;
    Ok(Decomposition { e_hat, total_var, mv_hat: (total_var - vm_hat).max(0.0), vm_hat, vm_sq_hat })
}

/// KL slack of the expectation bounds: `2 (H + 1) eps sqrt(kl / 2)`.
pub fn kl_penalty(horizon: usize, eps_d: f64, mean_kl: f64) -> f64 {
    2.0 * (horizon as f64 + 1.0) * eps_d * (mean_kl.max(0.0) / 2.0).sqrt()
}

/// Lower and upper surrogate bounds on the expected maximum cost.
pub fn surrogate_e_bounds(
    e_hat: f64,
    surrogate_adv: f64,
    eps_d: f64,
    mean_kl: f64,
    horizon: usize,
) -> (f64, f64) {
    let slack = kl_penalty(horizon, eps_d, mean_kl);
    let centre = e_hat + surrogate_adv;
    (centre - slack, centre + slack)
}

/// State-averaged bound on the shift of the cost value.
///
/// The KL coefficient is `|H (H - 1)|`, a non-negative penalty.
pub fn eta_bar(mean_episode_adv_sum: f64, eps_d: f64, mean_kl: f64, horizon: usize) -> f64 {
    let h = horizon as f64;
    mean_episode_adv_sum.abs() + eps_d * (h * (h - 1.0)).abs() * mean_kl
}

/// Constraint value at the current policy.
pub fn c_value(d: &Decomposition, hyper: &BoundHyper, eps_d: f64, mean_kl: f64, horizon: usize) -> f64 {
    d.e_hat + kl_penalty(horizon, eps_d, mean_kl) + d.mv_hat + d.vm_sq_hat - hyper.w
}
