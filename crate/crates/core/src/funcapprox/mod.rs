//! Small differentiable function approximators.

pub mod adam;
pub mod autodiff;
pub mod checkpoint;
pub mod losses;
pub mod mlp;
pub mod policy;
pub mod value;

use std::ops::{Deref, DerefMut};

pub use adam::Adam;
pub use autodiff::{grad, Real, Tape, Var};
pub use checkpoint::Checkpoint;
pub use losses::{monotonic_descent_loss, mse_loss, subsample_targets};
pub use mlp::{ForwardCache, Mlp, MlpSpec};
pub use policy::{gaussian_kl, GaussianPolicy, PolicyEval};
pub use value::{FitConfig, ValueNet};

/// All trainable parameters of a model as one vector in canonical order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlatParams(pub Vec<f64>);

impl FlatParams {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }

    pub fn norm(&self) -> f64 {
        self.dot(&self.0).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl Deref for FlatParams {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for FlatParams {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for FlatParams {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Pairwise summation keeps reductions bit-stable and accurate.
pub fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= 16 {
        x.iter().sum()
    } else {
        let mid = x.len() / 2;
        pairwise_sum(&x[..mid]) + pairwise_sum(&x[mid..])
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
