//! Trust-region machinery: KL Hessian products, conjugate gradient, the
//! closed-form dual of the single-constraint linearised step, and the
//! backtracking line search.

mod cg;
mod line_search;
mod subproblem;

pub use cg::{conjugate_gradient, CgConfig, CgOutcome};
pub use line_search::{line_search, Acceptance, LineSearchConfig, LineSearchOutcome, SearchCriteria};
pub use subproblem::{dual_objective, solve_subproblem, SolveOutcome, StepMode, TrustRegionSubproblem};

use crate::error::Result;
use crate::funcapprox::{FlatParams, GaussianPolicy, PolicyEval};

/// Damped Hessian of the mean KL at the behaviour policy applied to `v`.
pub fn kl_hessian_vector_product(
    policy: &GaussianPolicy,
    eval: &PolicyEval,
    v: &[f64],
    damping: f64,
) -> Result<FlatParams> {
    let mut hv = policy.fisher_vector_product(eval, v)?;
    if damping != 0.0 {
        hv.iter_mut().zip(v).for_each(|(h, x)| *h += damping * x);
    }
    Ok(hv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcapprox::{Mlp, MlpSpec};
    use ndarray::{arr1, Array2};

    #[test]
    fn zero_vector_maps_to_zero() {
        let net = Mlp::zeros(MlpSpec::new(2, vec![3], 1).unwrap());
        let p = GaussianPolicy::from_parts(net, arr1(&[0.0])).unwrap();
        let e = p.evaluate(Array2::ones((4, 2)).view()).unwrap();
        let hv = kl_hessian_vector_product(&p, &e, &vec![0.0; p.param_count()], 0.01).unwrap();
        assert!(hv.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn one_dimensional_mean_parameter() {
        // Linear mean head with no hidden layer: mu = bias. Fisher is 1/sigma^2.
        let sigma: f64 = 0.5;
        let mut net = Mlp::zeros(MlpSpec::new(1, vec![], 1).unwrap());
        net.set_flat(&[0.0, 0.3]).unwrap();
        let p = GaussianPolicy::from_parts(net, arr1(&[sigma.ln()])).unwrap();
        let e = p.evaluate(Array2::zeros((5, 1)).view()).unwrap();
        let v = [0.0, 1.7, 0.0];
        let hv = kl_hessian_vector_product(&p, &e, &v, 0.01).unwrap();
        assert!((hv[1] - (1.7 / (sigma * sigma) + 0.01 * 1.7)).abs() < 1e-12);
    }
}
