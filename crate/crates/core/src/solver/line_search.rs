use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSearchConfig {
    pub backtrack_coeff: f64,
    pub max_backtracks: usize,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        Self { backtrack_coeff: 0.8, max_backtracks: 100 }
    }
}

/// Quantities measured at a candidate point, relative to the start point.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Acceptance {
    pub kl: f64,
    /// Change of the constraint surrogate.
    pub x_delta: f64,
    /// Change of the importance-sampled objective.
    pub reward_delta: f64,
}

/// What a candidate must satisfy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchCriteria {
    pub max_kl: f64,
    /// Upper limit on `x_delta`; `None` skips the constraint check.
    pub x_limit: Option<f64>,
    /// Whether the objective must not decrease.
    pub require_improvement: bool,
}

impl SearchCriteria {
    pub fn accepts(&self, a: &Acceptance) -> bool {
        let finite = a.kl.is_finite() && a.x_delta.is_finite() && a.reward_delta.is_finite();
        finite
            && a.kl <= self.max_kl
            && self.x_limit.is_none_or(|lim| a.x_delta <= lim)
            && (!self.require_improvement || a.reward_delta >= 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchOutcome {
    pub accepted: bool,
    pub theta: Vec<f64>,
    /// Index `k` of the accepted step `coeff^k`, or the number tried on rejection.
    pub backtracks: usize,
    pub step_fraction: f64,
    /// Measurements at the accepted point, or at the last candidate tried.
    pub measured: Acceptance,
}

/// Tries `theta + coeff^k * step` for `k = 0, 1, ...` and returns the first
/// candidate the criteria accept. On exhaustion `theta` is returned unchanged.
pub fn line_search<F>(
    theta: &[f64],
    step: &[f64],
    cfg: &LineSearchConfig,
    criteria: &SearchCriteria,
    mut measure: F,
) -> Result<LineSearchOutcome>
where
    F: FnMut(&[f64]) -> Result<Acceptance>,
{
    let mut last = Acceptance::default();
    let mut frac = 1.0;
    for k in 0..cfg.max_backtracks {
        let candidate: Vec<f64> = theta.iter().zip(step).map(|(t, s)| t + frac * s).collect();
        let m = measure(&candidate)?;
        last = m;
        if criteria.accepts(&m) {
            return Ok(LineSearchOutcome {
                accepted: true,
                theta: candidate,
                backtracks: k,
                step_fraction: frac,
                measured: m,
            });
        }
        frac *= cfg.backtrack_coeff;
    }
    log::debug!("line search rejected all {} candidates", cfg.max_backtracks);
    Ok(LineSearchOutcome {
        accepted: false,
        theta: theta.to_vec(),
        backtracks: cfg.max_backtracks,
        step_fraction: 0.0,
        measured: last,
    })
}
