use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::confidence;

/// Empirical check of the upper probability bound `mean + k * variance`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub k: f64,
    pub mean: f64,
    pub variance: f64,
    pub bound: f64,
    pub empirical_p: f64,
    pub nominal_p: f64,
    /// Three binomial standard errors at the nominal probability.
    pub slack: f64,
    pub pass: bool,
}

pub fn verify_probability_bound(samples: &[f64], k: f64) -> Result<BoundCheck> {
    verify_probability_bound_with(samples, k, confidence)
}

/// As [`verify_probability_bound`], with the confidence function supplied by
/// the caller so that faulty implementations can be exercised.
pub fn verify_probability_bound_with<F>(samples: &[f64], k: f64, conf: F) -> Result<BoundCheck>
where
    F: Fn(f64, f64) -> Result<f64>,
{
    let n = samples.len();
    if n < 100 {
        return Err(Error::Input(format!("need at least 100 samples, got {n}")));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::Input("samples must be finite".into()));
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let variance = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let bound = mean + k * variance;
    let empirical_p = samples.iter().filter(|&&x| x <= bound).count() as f64 / nf;
    let nominal_p = if variance > 0.0 { conf(k, variance)? } else { 0.0 };
    let slack = 3.0 * (nominal_p * (1.0 - nominal_p) / nf).max(0.0).sqrt();
    Ok(BoundCheck {
        k,
        mean,
        variance,
        bound,
        empirical_p,
        nominal_p,
        slack,
        pass: empirical_p >= nominal_p - slack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, LogNormal, StandardNormal};

    #[test]
    fn k_zero_always_passes() {
        let x: Vec<f64> = (0..200).map(|i| (i % 7) as f64).collect();
        let r = verify_probability_bound(&x, 0.0).unwrap();
        assert_eq!(r.nominal_p, 0.0);
        assert_eq!(r.bound, r.mean);
        assert!(r.pass);
    }

    #[test]
    fn normal_and_lognormal_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let normal: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let r = verify_probability_bound(&normal, 2.0).unwrap();
        assert!(r.pass);
        assert!((r.nominal_p - (1.0 - 1.0 / (4.0 * r.variance + 1.0))).abs() < 1e-15);
        let ln = LogNormal::new(0.0, 1.0).unwrap();
        let heavy: Vec<f64> = (0..100_000).map(|_| ln.sample(&mut rng)).collect();
        for k in [1.0, 7.0] {
            assert!(verify_probability_bound(&heavy, k).unwrap().pass);
        }
    }

    #[test]
    fn too_few_samples() {
        assert!(verify_probability_bound(&[0.0; 99], 1.0).is_err());
    }

    #[test]
    fn a_wrong_confidence_is_caught() {
        // Claims near-certainty regardless of k.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let r = verify_probability_bound_with(&x, 0.5, |_, _| Ok(0.999)).unwrap();
        assert!(!r.pass);
    }
}
