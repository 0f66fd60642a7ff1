use crate::error::{Error, Result};
use crate::funcapprox::dot;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgConfig {
    pub max_iters: usize,
    /// Relative residual target `|Hx - rhs| <= tol |rhs|`.
    pub tol: f64,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self { max_iters: 20, tol: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
    pub converged: bool,
}

/// Solves `H x = rhs` for a symmetric positive-definite operator.
pub fn conjugate_gradient<F>(mut hvp: F, rhs: &[f64], cfg: &CgConfig) -> Result<CgOutcome>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if cfg.max_iters < 1 {
        return Err(Error::Input("conjugate gradient needs max_iters >= 1".into()));
    }
    let n = rhs.len();
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let target = cfg.tol * rr.sqrt();
    if rr.sqrt() <= target || rr == 0.0 {
        return Ok(CgOutcome { x, iterations: 0, residual_norm: rr.sqrt(), converged: true });
    }
    let mut iterations = 0;
    for _ in 0..cfg.max_iters {
        let hp = hvp(&p)?;
        let php = dot(&p, &hp);
        if !(php > 0.0) {
            return Err(Error::Numeric(format!(
                "conjugate gradient breakdown (p^T H p = {php:e}); increase damping"
            )));
        }
        let alpha = rr / php;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * hp[i];
        }
        iterations += 1;
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= target {
            rr = rr_new;
            break;
        }
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    let residual_norm = rr.sqrt();
    Ok(CgOutcome { x, iterations, residual_norm, converged: residual_norm <= target })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn matvec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
        m.iter().map(|row| dot(row, v)).collect()
    }

    #[test]
    fn identity_converges_in_one_iteration() {
        let rhs = [1.0, -2.0, 3.0];
        let out = conjugate_gradient(|v| Ok(v.to_vec()), &rhs, &CgConfig::default()).unwrap();
        assert_eq!(out.iterations, 1);
        assert_eq!(out.x, rhs.to_vec());
    }

    #[test]
    fn diagonal_system() {
        let out = conjugate_gradient(|v| Ok(vec![2.0 * v[0], 4.0 * v[1]]), &[2.0, 4.0], &CgConfig::default())
            .unwrap();
        assert!((out.x[0] - 1.0).abs() < 1e-12 && (out.x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_spd_reaches_tight_residual() {
        let mut r = ChaCha8Rng::seed_from_u64(8);
        let n = 100;
        let a: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        // M = A^T A / n + I is well conditioned.
        let m: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let s: f64 = (0..n).map(|k| a[k][i] * a[k][j]).sum::<f64>() / n as f64;
                        s + if i == j { 1.0 } else { 0.0 }
                    })
                    .collect()
            })
            .collect();
        let rhs: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let cfg = CgConfig { max_iters: 100, tol: 1e-10 };
        let out = conjugate_gradient(|v| Ok(matvec(&m, v)), &rhs, &cfg).unwrap();
        let hx = matvec(&m, &out.x);
        let res: f64 = hx.iter().zip(&rhs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(res <= 1e-8, "residual {res}");
    }

    #[test]
    fn indefinite_operator_breaks_down() {
        let e = conjugate_gradient(|v| Ok(vec![-v[0]]), &[1.0], &CgConfig::default()).unwrap_err();
        assert!(e.to_string().contains("damping"));
    }
}
