use rand::Rng;

use crate::error::{Error, Result};

fn check_lengths(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Input(format!(
            "prediction/target lengths {} and {} must match and be non-zero",
            pred.len(),
            target.len()
        )));
    }
    Ok(())
}

/// Mean squared error and its gradient with respect to the predictions.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_lengths(pred, target)?;
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let e = p - t;
            loss += e * e;
            2.0 * e / n
        })
        .collect();
    Ok((loss / n, grad))
}

/// Squared error plus a penalty on increases of the predicted sequence.
///
/// Consecutive samples sharing an episode id form a pair; any rise
/// `pred[i+1] > pred[i]` costs `weight * rise^2`. Returns the loss and its
/// gradient with respect to `pred`.
pub fn monotonic_descent_loss(
    pred: &[f64],
    target: &[f64],
    episode_ids: &[usize],
    weight: f64,
) -> Result<(f64, Vec<f64>)> {
    if episode_ids.len() != pred.len() {
        return Err(Error::Input("episode ids must align with predictions".into()));
    }
    if !(weight >= 0.0) {
        return Err(Error::Input("monotonic weight must be >= 0".into()));
    }
    let (mut loss, mut grad) = mse_loss(pred, target)?;
    if weight > 0.0 {
        for i in 0..pred.len().saturating_sub(1) {
            if episode_ids[i] != episode_ids[i + 1] {
                continue;
            }
            let rise = pred[i + 1] - pred[i];
            if rise > 0.0 {
                loss += weight * rise * rise;
                grad[i + 1] += 2.0 * weight * rise;
                grad[i] -= 2.0 * weight * rise;
            }
        }
    }
    Ok((loss, grad))
}

/// Indices kept after thinning zero targets; nonzero targets are always kept
/// and the original order is preserved.
pub fn subsample_targets<R: Rng>(targets: &[f64], keep_ratio_zero: f64, rng: &mut R) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&keep_ratio_zero) {
        return Err(Error::Input("keep_ratio_zero must lie in [0, 1]".into()));
    }
    let kept: Vec<usize> = targets
        .iter()
        .enumerate()
        .filter(|(_, &t)| t != 0.0 || keep_ratio_zero >= 1.0 || rng.random::<f64>() < keep_ratio_zero)
        .map(|(i, _)| i)
        .collect();
    if kept.is_empty() {
        log::warn!("sub-sampling kept no cost-value targets");
    }
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn monotone_exact_prediction_has_zero_loss() {
        let y = [0.5, 0.4, 0.4, 0.0];
        let (l, _) = monotonic_descent_loss(&y, &y, &[0; 4], 1.0).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn hand_evaluated_case() {
        let (l, _) = monotonic_descent_loss(&[0.0, 1.0], &[0.0, 0.0], &[0, 0], 1.0).unwrap();
        assert!((l - 1.5).abs() < 1e-15);
    }

    #[test]
    fn zero_weight_is_plain_mse() {
        let p = [0.3, 0.9, 0.1];
        let t = [0.0, 0.5, 0.2];
        let (a, ga) = monotonic_descent_loss(&p, &t, &[0, 0, 0], 0.0).unwrap();
        let (b, gb) = mse_loss(&p, &t).unwrap();
        assert_eq!(a, b);
        assert_eq!(ga, gb);
    }

    #[test]
    fn pairs_do_not_cross_episodes() {
        let (l, _) = monotonic_descent_loss(&[0.0, 1.0], &[0.0, 1.0], &[0, 1], 1.0).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(monotonic_descent_loss(&[0.0], &[0.0, 1.0], &[0], 1.0).is_err());
    }

    #[test]
    fn subsample_extremes() {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let t = [0.0, 0.2, 0.0, 0.1];
        assert_eq!(subsample_targets(&t, 1.0, &mut r).unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(subsample_targets(&t, 0.0, &mut r).unwrap(), vec![1, 3]);
        assert!(subsample_targets(&[0.0; 5], 0.0, &mut r).unwrap().is_empty());
    }

    #[test]
    fn subsample_ratio_concentrates() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let t = vec![0.0; 100_000];
        let kept = subsample_targets(&t, 0.5, &mut r).unwrap().len() as f64 / 1e5;
        assert!((kept - 0.5).abs() <= 0.01);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let pred: Vec<f64> = (0..9).map(|_| r.random_range(-1.0..1.0)).collect();
        let target: Vec<f64> = (0..9).map(|_| r.random_range(-1.0..1.0)).collect();
        let ids = [0, 0, 0, 1, 1, 1, 1, 2, 2];
        let (_, g) = monotonic_descent_loss(&pred, &target, &ids, 0.7).unwrap();
        let h = 1e-6;
        for i in 0..pred.len() {
            let mut p = pred.clone();
            p[i] += h;
            let fp = monotonic_descent_loss(&p, &target, &ids, 0.7).unwrap().0;
            p[i] -= 2.0 * h;
            let fm = monotonic_descent_loss(&p, &target, &ids, 0.7).unwrap().0;
            assert!(((fp - fm) / (2.0 * h) - g[i]).abs() < 1e-7);
        }
    }

    proptest! {
        #[test]
        fn penalty_vanishes_iff_non_increasing(pred in prop::collection::vec(-5.0f64..5.0, 2..20)) {
            let ids = vec![0; pred.len()];
            let (with, _) = monotonic_descent_loss(&pred, &pred, &ids, 1.0).unwrap();
            let non_increasing = pred.windows(2).all(|w| w[1] <= w[0]);
            prop_assert_eq!(with == 0.0, non_increasing);
        }
    }
}
