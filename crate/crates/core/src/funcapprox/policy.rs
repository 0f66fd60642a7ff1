use ndarray::{Array1, Array2, ArrayView2, Zip};
use rand::Rng;
use rand_distr::StandardNormal;

use super::mlp::{ForwardCache, Mlp, MlpSpec};
use super::FlatParams;
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Diagonal Gaussian policy: tanh MLP mean head and a state-independent
/// log standard deviation. Flat ordering is the mean net followed by `log_std`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    mean: Mlp,
    log_std: Array1<f64>,
}

/// Batch evaluation of a policy: mean actions plus the forward cache.
#[derive(Debug, Clone)]
pub struct PolicyEval {
    cache: ForwardCache,
    log_std: Array1<f64>,
}

impl PolicyEval {
    pub fn means(&self) -> &Array2<f64> {
        &self.cache.output
    }

    pub fn log_std(&self) -> &Array1<f64> {
        &self.log_std
    }

    pub fn rows(&self) -> usize {
        self.cache.rows()
    }
}

/// KL(old || new) between two scalar Gaussians given means and log-stds.
pub fn gaussian_kl(mu_old: f64, ls_old: f64, mu_new: f64, ls_new: f64) -> f64 {
    let var_old = (2.0 * ls_old).exp();
    let var_new = (2.0 * ls_new).exp();
    ls_new - ls_old + (var_old + (mu_old - mu_new).powi(2)) / (2.0 * var_new) - 0.5
}

impl GaussianPolicy {
    pub fn new<R: Rng>(
        obs_dim: usize,
        act_dim: usize,
        hidden: Vec<usize>,
        log_std_init: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let spec = MlpSpec::new(obs_dim, hidden, act_dim)?;
        Ok(Self { mean: Mlp::init(spec, 0.01, rng), log_std: Array1::from_elem(act_dim, log_std_init) })
    }

    pub fn from_parts(mean: Mlp, log_std: Array1<f64>) -> Result<Self> {
        if log_std.len() != mean.spec().output_dim {
            return Err(Error::Input("log_std length must equal the action dimension".into()));
        }
        if log_std.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite log_std".into()));
        }
        Ok(Self { mean, log_std })
    }

    pub fn spec(&self) -> &MlpSpec {
        self.mean.spec()
    }

    pub fn mean_net(&self) -> &Mlp {
        &self.mean
    }

    pub fn log_std(&self) -> &Array1<f64> {
        &self.log_std
    }

    pub fn act_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.mean.spec().input_dim
    }

    pub fn param_count(&self) -> usize {
        self.mean.param_count() + self.act_dim()
    }

    pub fn to_flat(&self) -> FlatParams {
        let mut v = self.mean.to_flat().0;
        v.extend(self.log_std.iter());
        FlatParams(v)
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Input(format!(
                "expected {} policy parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let m = self.mean.param_count();
        self.mean.set_flat(&flat[..m])?;
        self.log_std.iter_mut().zip(&flat[m..]).for_each(|(d, s)| *d = *s);
        Ok(())
    }

    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let mut p = self.clone();
        p.set_flat(flat)?;
        Ok(p)
    }

    pub fn clamp_log_std(&mut self, floor: f64) {
        self.log_std.mapv_inplace(|v| v.max(floor));
    }

    pub fn mean_action(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.mean.forward_one(obs)
    }

    /// Draws an action and returns it with its log-density.
    pub fn sample<R: Rng>(&self, obs: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64)> {
        let mu = self.mean.forward_one(obs)?;
        let mut action = Vec::with_capacity(mu.len());
        let mut logp = 0.0;
        for (m, ls) in mu.iter().zip(self.log_std.iter()) {
            let z: f64 = rng.sample(StandardNormal);
            action.push(m + ls.exp() * z);
            logp += -0.5 * z * z - ls - 0.5 * LN_2PI;
        }
        Ok((action, logp))
    }

    pub fn evaluate(&self, obs: ArrayView2<f64>) -> Result<PolicyEval> {
        Ok(PolicyEval { cache: self.mean.forward_cached(obs)?, log_std: self.log_std.clone() })
    }

    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        let mu = self.mean.forward_one(obs)?;
        Ok(mu
            .iter()
            .zip(action)
            .zip(self.log_std.iter())
            .map(|((m, a), ls)| {
                let z = (a - m) / ls.exp();
                -0.5 * z * z - ls - 0.5 * LN_2PI
            })
            .sum())
    }

    pub fn log_prob_batch(eval: &PolicyEval, actions: ArrayView2<f64>) -> Vec<f64> {
        let means = eval.means();
        let inv_std: Vec<f64> = eval.log_std.iter().map(|ls| (-ls).exp()).collect();
        let norm: f64 = eval.log_std.sum() + 0.5 * LN_2PI * eval.log_std.len() as f64;
        means
            .outer_iter()
            .zip(actions.outer_iter())
            .map(|(m, a)| {
                let mut s = 0.0;
                for d in 0..m.len() {
                    let z = (a[d] - m[d]) * inv_std[d];
                    s += z * z;
                }
                -0.5 * s - norm
            })
            .collect()
    }

    /// Gradient of `sum_i weights[i] * log pi(a_i | s_i)`.
    pub fn grad_weighted_log_prob(
        &self,
        eval: &PolicyEval,
        actions: ArrayView2<f64>,
        weights: &[f64],
    ) -> Result<FlatParams> {
        let n = eval.rows();
        if weights.len() != n || actions.nrows() != n {
            return Err(Error::Input("weights/actions length must match the batch".into()));
        }
        let var: Vec<f64> = eval.log_std.iter().map(|ls| (2.0 * ls).exp()).collect();
        let means = eval.means();
        let mut grad_mu = Array2::<f64>::zeros(means.dim());
        let mut grad_ls = vec![0.0; self.act_dim()];
        for i in 0..n {
            for d in 0..self.act_dim() {
                let diff = actions[[i, d]] - means[[i, d]];
                grad_mu[[i, d]] = weights[i] * diff / var[d];
                grad_ls[d] += weights[i] * (diff * diff / var[d] - 1.0);
            }
        }
        let mut g = self.mean.backward(&eval.cache, grad_mu.view())?.0;
        g.extend(grad_ls);
        Ok(FlatParams(g))
    }

    /// Mean over the batch of KL(old || new), summed over action dimensions.
    pub fn mean_kl(old: &PolicyEval, new: &PolicyEval) -> f64 {
        let n = old.rows();
        if n == 0 {
            return 0.0;
        }
        let mut total = 0.0;
        Zip::from(old.means().rows()).and(new.means().rows()).for_each(|mo, mn| {
            for d in 0..mo.len() {
                total += gaussian_kl(mo[d], old.log_std[d], mn[d], new.log_std[d]);
            }
        });
        total / n as f64
    }

    /// Gradient of `mean_kl(old, new)` with respect to the parameters of `self`,
    /// where `new` is an evaluation of `self`.
    pub fn kl_grad(&self, old: &PolicyEval, new: &PolicyEval) -> Result<FlatParams> {
        let n = old.rows() as f64;
        let var_old: Vec<f64> = old.log_std.iter().map(|ls| (2.0 * ls).exp()).collect();
        let var_new: Vec<f64> = new.log_std.iter().map(|ls| (2.0 * ls).exp()).collect();
        let mo = old.means();
        let mn = new.means();
        let mut grad_mu = Array2::<f64>::zeros(mn.dim());
        let mut grad_ls = vec![0.0; self.act_dim()];
        for i in 0..old.rows() {
            for d in 0..self.act_dim() {
                let diff = mn[[i, d]] - mo[[i, d]];
                grad_mu[[i, d]] = diff / var_new[d] / n;
                grad_ls[d] += (1.0 - (var_old[d] + diff * diff) / var_new[d]) / n;
            }
        }
        let mut g = self.mean.backward(&new.cache, grad_mu.view())?.0;
        g.extend(grad_ls);
        Ok(FlatParams(g))
    }

    /// Hessian of the mean KL at `old == new` applied to `v`.
    ///
    /// The KL gradient vanishes there, so the Hessian reduces to the
    /// Gauss-Newton form: `J^T diag(1/sigma^2) J / N` on the mean parameters
    /// and `2 I` on the log-stds.
    pub fn fisher_vector_product(&self, eval: &PolicyEval, v: &[f64]) -> Result<FlatParams> {
        if v.len() != self.param_count() {
            return Err(Error::Input("vector length must equal the parameter count".into()));
        }
        let m = self.mean.param_count();
        let n = eval.rows() as f64;
        let mut jv = self.mean.jvp(&eval.cache, &v[..m])?;
        let inv_var: Vec<f64> = eval.log_std.iter().map(|ls| (-2.0 * ls).exp() / n).collect();
        for mut row in jv.rows_mut() {
            row.iter_mut().zip(&inv_var).for_each(|(x, w)| *x *= w);
        }
        let mut out = self.mean.backward(&eval.cache, jv.view())?.0;
        out.extend(v[m..].iter().map(|x| 2.0 * x));
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("non-finite Fisher-vector product".into()));
        }
        Ok(FlatParams(out))
    }
}
