use serde::{Deserialize, Serialize};

use super::cg::{conjugate_gradient, CgConfig};
use crate::error::{Error, Result};
use crate::funcapprox::{dot, FlatParams};

const LAMBDA_MIN: f64 = 1e-12;
const LAMBDA_MAX: f64 = 1e12;
/// Squared norm below which the constraint gradient is treated as absent.
const B_NEGLIGIBLE: f64 = 1e-16;

/// Linearised step problem:
/// maximise `g^T d` subject to `d^T H d / 2 <= delta` and `c + b^T d <= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrustRegionSubproblem {
    pub g: FlatParams,
    pub b: FlatParams,
    pub c: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    /// The natural-gradient step already satisfies the linear constraint.
    Unconstrained,
    /// Both constraints handled through the dual.
    Feasible,
    /// No feasible point in the trust region: pure constraint descent.
    Recovery,
}

impl StepMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            StepMode::Unconstrained => "unconstrained",
            StepMode::Feasible => "feasible",
            StepMode::Recovery => "recovery",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub direction: FlatParams,
    pub lambda: f64,
    pub nu: f64,
    pub mode: StepMode,
    /// `d^T H d / 2` of the returned direction.
    pub predicted_kl: f64,
    pub q: f64,
    pub r: f64,
    pub s: f64,
}

/// Dual function to be minimised over `lambda > 0, nu >= 0`.
pub fn dual_objective(q: f64, r: f64, s: f64, c: f64, delta: f64, lambda: f64, nu: f64) -> f64 {
    (q - 2.0 * nu * r + nu * nu * s) / (2.0 * lambda) + lambda * delta - nu * c
}

/// Closed interval `(lo, hi)` of dual values.
type Range = (f64, f64);

/// Minimiser of `(a / l + b l) / 2` over `[lo, hi]`.
fn argmin_on(a: f64, b: f64, lo: f64, hi: f64) -> f64 {
    let lo = lo.max(LAMBDA_MIN);
    let hi = hi.min(LAMBDA_MAX);
    if b <= 0.0 {
        return hi;
    }
    if a <= 0.0 {
        return lo;
    }
    (a / b).sqrt().clamp(lo, hi)
}

/// Closed-form solution of the single-constraint step problem.
pub fn solve_subproblem<F>(problem: &TrustRegionSubproblem, mut hvp: F, cg: &CgConfig) -> Result<SolveOutcome>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let delta = problem.delta;
    if !(delta > 0.0) {
        return Err(Error::Input("trust region radius must be > 0".into()));
    }
    let c = problem.c;
    let hinv_g = conjugate_gradient(&mut hvp, &problem.g, cg)?.x;
    let q = dot(&problem.g, &hinv_g).max(0.0);

    let trpo = |q: f64, r: f64, s: f64| -> SolveOutcome {
        if q <= 0.0 {
            return SolveOutcome {
                direction: FlatParams::zeros(problem.g.len()),
                lambda: 0.0,
                nu: 0.0,
                mode: StepMode::Unconstrained,
                predicted_kl: 0.0,
                q,
                r,
                s,
            };
        }
        let scale = (2.0 * delta / q).sqrt();
        SolveOutcome {
            direction: FlatParams(hinv_g.iter().map(|x| scale * x).collect()),
            lambda: 1.0 / scale,
            nu: 0.0,
            mode: StepMode::Unconstrained,
            predicted_kl: delta,
            q,
            r,
            s,
        }
    };

    if dot(&problem.b, &problem.b) <= B_NEGLIGIBLE {
        // The step cannot move the linearised constraint.
        return Ok(trpo(q, 0.0, 0.0));
    }
    let hinv_b = conjugate_gradient(&mut hvp, &problem.b, cg)?.x;
    let r = dot(&problem.g, &hinv_b);
    let s = dot(&problem.b, &hinv_b);
    if !(s > 0.0) {
        return Err(Error::Numeric(format!("b^T H^-1 b = {s:e} is not positive")));
    }

    if c <= 0.0 && (q <= 0.0 || c + (2.0 * delta / q).sqrt() * r <= 0.0) {
        return Ok(trpo(q, r, s));
    }
    if c > 0.0 && c * c / s > 2.0 * delta {
        let scale = (2.0 * delta / s).sqrt();
        return Ok(SolveOutcome {
            direction: FlatParams(hinv_b.iter().map(|x| -scale * x).collect()),
            lambda: 0.0,
            nu: 0.0,
            mode: StepMode::Recovery,
            predicted_kl: delta,
            q,
            r,
            s,
        });
    }

    // nu*(lambda) = max(0, (r + lambda c) / s); the sign of r + lambda c
    // splits lambda into the constraint-active (a) and inactive (b) ranges.
    let a_coef = (q - r * r / s).max(0.0);
    let b_coef = 2.0 * delta - c * c / s;
    let d_active = |l: f64| 0.5 * (a_coef / l + b_coef * l) - r * c / s;
    let d_inactive = |l: f64| 0.5 * (q / l + 2.0 * delta * l);
    let (active, inactive): (Option<Range>, Option<Range>) = if c > 0.0 {
        let mid = -r / c;
        (Some((mid.max(0.0), f64::INFINITY)), (mid > 0.0).then_some((0.0, mid)))
    } else if c < 0.0 {
        let mid = -r / c;
        ((mid > 0.0).then_some((0.0, mid)), Some((mid.max(0.0), f64::INFINITY)))
    } else if r > 0.0 {
        (Some((0.0, f64::INFINITY)), None)
    } else {
        (None, Some((0.0, f64::INFINITY)))
    };
    let mut best: Option<(f64, f64)> = None;
    if let Some((lo, hi)) = active {
        let l = argmin_on(a_coef, b_coef, lo, hi);
        best = Some((l, d_active(l)));
    }
    if let Some((lo, hi)) = inactive {
        let l = argmin_on(q, 2.0 * delta, lo, hi);
        let v = d_inactive(l);
        if best.is_none_or(|(_, bv)| v < bv) {
            best = Some((l, v));
        }
    }
    let (lambda, _) = best.expect("at least one dual range is non-empty");
    let nu = ((r + lambda * c) / s).max(0.0);
    let direction: Vec<f64> = hinv_g.iter().zip(&hinv_b).map(|(hg, hb)| (hg - nu * hb) / lambda).collect();
    if direction.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite search direction".into()));
    }
    let predicted_kl = (q - 2.0 * nu * r + nu * nu * s) / (2.0 * lambda * lambda);
    Ok(SolveOutcome {
        direction: FlatParams(direction),
        lambda,
        nu,
        mode: StepMode::Feasible,
        predicted_kl,
        q,
        r,
        s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn diag(d: Vec<f64>) -> impl FnMut(&[f64]) -> Result<Vec<f64>> {
        move |v: &[f64]| Ok(v.iter().zip(&d).map(|(x, h)| x * h).collect())
    }

    fn problem(g: Vec<f64>, b: Vec<f64>, c: f64) -> TrustRegionSubproblem {
        TrustRegionSubproblem { g: FlatParams(g), b: FlatParams(b), c, delta: 0.02 }
    }

    #[test]
    fn inactive_constraint_gives_trpo_step() {
        let p = problem(vec![1.0, 2.0], vec![0.0, 0.0], -5.0);
        let out = solve_subproblem(&p, diag(vec![1.0, 4.0]), &CgConfig::default()).unwrap();
        assert_eq!(out.mode, StepMode::Unconstrained);
        assert!((out.predicted_kl - 0.02).abs() < 1e-15);
    }

    #[test]
    fn zero_objective_steps_against_b_only() {
        let p = problem(vec![0.0, 0.0], vec![1.0, 1.0], 0.05);
        let out = solve_subproblem(&p, diag(vec![1.0, 1.0]), &CgConfig::default()).unwrap();
        assert_eq!(out.mode, StepMode::Feasible);
        assert!(out.direction[0] < 0.0);
        assert!((out.direction[0] - out.direction[1]).abs() < 1e-12);
        assert!(p.c + dot(&p.b, &out.direction) <= 1e-8);
    }

    #[test]
    fn unreachable_feasible_set_triggers_recovery() {
        let p = problem(vec![1.0, 0.0], vec![0.1, 0.0], 1.0);
        let out = solve_subproblem(&p, diag(vec![1.0, 1.0]), &CgConfig::default()).unwrap();
        assert_eq!(out.mode, StepMode::Recovery);
        assert!(dot(&p.b, &out.direction) < 0.0);
    }

    #[test]
    fn feasible_solutions_respect_both_constraints() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let n = 4;
            let h: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..3.0)).collect();
            let g: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c = rng.random_range(-0.3..0.3);
            let p = problem(g, b, c);
            let out = solve_subproblem(&p, diag(h.clone()), &CgConfig::default()).unwrap();
            let kl: f64 = out.direction.iter().zip(&h).map(|(d, hh)| 0.5 * d * d * hh).sum();
            assert!(kl <= p.delta + 1e-8);
            match out.mode {
                StepMode::Recovery => assert!(dot(&p.b, &out.direction) < 0.0),
                _ => assert!(p.c + dot(&p.b, &out.direction) <= 1e-8),
            }
        }
    }
}
