//! Advantages, cost-expectation bounds, variance surrogates and the
//! constraint quantities that feed the trust-region step.

mod advantages;
mod bounds;
mod surrogate;

pub use advantages::{compute_advantages, gae, standardize, AdvantageConfig, AdvantageSet};
pub use bounds::{
    c_value, confidence, estimate_decomposition, eta_bar, kl_penalty, surrogate_e_bounds, BoundHyper,
    Decomposition,
};
pub use surrogate::{
    constraint_gradient, objective_gradient, surrogate_report, x_gradient, SurrogateReport, XBreakdown,
    XSurrogate,
};
