//! Absolute state-wise constrained policy optimization.
//!
//! The crate is organised bottom-up: environments and the running-maximum
//! cost augmentation, a small differentiable MLP stack, estimators for the
//! expectation and variance surrogates, the trust-region solver, and the
//! training loops for ASCPO and its baselines. The [`bench`] module holds
//! evaluation metrics and exact enumeration oracles, and [`verify`] bundles
//! them into runnable invariant suites.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algorithms;
pub mod batch;
pub mod bench;
pub mod config;
pub mod env;
pub mod error;
pub mod estimators;
pub mod funcapprox;
pub mod mmdp;
pub mod rng;
pub mod solver;
pub mod verify;

pub use algorithms::{Algorithm, IterationReport, TrainConfig, Trainer};
pub use batch::EpisodeBatch;
pub use bench::{EvalReport, ExactMoments};
pub use config::RunConfig;
pub use env::{Environment, GridMdp, PointEnv, PointEnvConfig};
pub use error::{Error, Result};
pub use estimators::{AdvantageSet, BoundHyper, SurrogateReport};
pub use funcapprox::{FlatParams, GaussianPolicy, Mlp, MlpSpec};
pub use solver::{SolveOutcome, StepMode, TrustRegionSubproblem};
