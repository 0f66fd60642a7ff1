//! Evaluation metrics and exact oracles.

mod bound;
mod eval;
mod exact;

pub use bound::{verify_probability_bound, verify_probability_bound_with, BoundCheck};
pub use eval::{
    cost_distribution, evaluate, evaluate_env, psi_score, write_dist_csv, write_eval_csv, CostDistribution,
    EvalReport, PsiScore, SeedGroup,
};
pub use exact::{augmented_max_cost_moments, exact_moments, exact_moments_with_gamma, ExactMoments};
