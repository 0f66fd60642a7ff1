//! Scalar reverse-mode differentiation on a tape.
//!
//! Formulas written against the [`Real`] trait evaluate either on plain `f64`
//! or on tape variables, so the same code yields values and exact gradients.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Numbers a surrogate formula can be evaluated on.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn value(self) -> f64;
    /// A constant living in the same context as `self`.
    fn lift(self, c: f64) -> Self;
    /// Derivative taken as 0 at the origin.
    fn abs(self) -> Self;
    /// Derivative taken as 0 at the origin.
    fn sqrt(self) -> Self;
    fn max(self, other: Self) -> Self;
    fn min(self, other: Self) -> Self;
    fn square(self) -> Self {
        self * self
    }
}

impl Real for f64 {
    fn value(self) -> f64 {
        self
    }
    fn lift(self, c: f64) -> Self {
        c
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn max(self, other: Self) -> Self {
        if self >= other {
            self
        } else {
            other
        }
    }
    fn min(self, other: Self) -> Self {
        if self <= other {
            self
        } else {
            other
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    parents: [(usize, f64); 2],
}

/// Append-only record of elementary operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// A value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: usize,
    value: f64,
}

const NONE: (usize, f64) = (usize::MAX, 0.0);

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, parents: [(usize, f64); 2]) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { parents });
        nodes.len() - 1
    }

    pub fn var(&self, value: f64) -> Var<'_> {
        Var { tape: self, index: self.push([NONE, NONE]), value }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Adjoints of every recorded node with respect to `output`.
    pub fn adjoints(&self, output: Var<'_>) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0; nodes.len()];
        adj[output.index] = 1.0;
        for i in (0..=output.index).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            for &(p, w) in &nodes[i].parents {
                if p != usize::MAX {
                    adj[p] += a * w;
                }
            }
        }
        adj
    }
}

impl<'t> Var<'t> {
    pub fn index(&self) -> usize {
        self.index
    }

    fn unary(self, value: f64, d: f64) -> Self {
        Var { tape: self.tape, index: self.tape.push([(self.index, d), NONE]), value }
    }

    fn binary(self, other: Self, value: f64, da: f64, db: f64) -> Self {
        Var { tape: self.tape, index: self.tape.push([(self.index, da), (other.index, db)]), value }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        self.binary(o, self.value + o.value, 1.0, 1.0)
    }
}
impl<'t> Sub for Var<'t> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self.binary(o, self.value - o.value, 1.0, -1.0)
    }
}
impl<'t> Mul for Var<'t> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        self.binary(o, self.value * o.value, o.value, self.value)
    }
}
impl<'t> Div for Var<'t> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let q = self.value / o.value;
        self.binary(o, q, 1.0 / o.value, -q / o.value)
    }
}
impl<'t> Neg for Var<'t> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(-self.value, -1.0)
    }
}
impl<'t> Add<f64> for Var<'t> {
    type Output = Self;
    fn add(self, c: f64) -> Self {
        self.unary(self.value + c, 1.0)
    }
}
impl<'t> Sub<f64> for Var<'t> {
    type Output = Self;
    fn sub(self, c: f64) -> Self {
        self.unary(self.value - c, 1.0)
    }
}
impl<'t> Mul<f64> for Var<'t> {
    type Output = Self;
    fn mul(self, c: f64) -> Self {
        self.unary(self.value * c, c)
    }
}
impl<'t> Div<f64> for Var<'t> {
    type Output = Self;
    fn div(self, c: f64) -> Self {
        self.unary(self.value / c, 1.0 / c)
    }
}

impl<'t> Real for Var<'t> {
    fn value(self) -> f64 {
        self.value
    }
    fn lift(self, c: f64) -> Self {
        self.tape.var(c)
    }
    fn abs(self) -> Self {
        let d = if self.value > 0.0 {
            1.0
        } else if self.value < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.unary(self.value.abs(), d)
    }
    fn sqrt(self) -> Self {
        let r = self.value.sqrt();
        let d = if r > 0.0 { 0.5 / r } else { 0.0 };
        self.unary(r, d)
    }
    fn max(self, o: Self) -> Self {
        if self.value >= o.value {
            self.binary(o, self.value, 1.0, 0.0)
        } else {
            self.binary(o, o.value, 0.0, 1.0)
        }
    }
    fn min(self, o: Self) -> Self {
        if self.value <= o.value {
            self.binary(o, self.value, 1.0, 0.0)
        } else {
            self.binary(o, o.value, 0.0, 1.0)
        }
    }
}

/// Value and gradient of a scalar function of `params`.
pub fn grad<F>(params: &[f64], f: F) -> Result<(f64, Vec<f64>)>
where
    F: for<'t> FnOnce(&[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = params.iter().map(|&p| tape.var(p)).collect();
    let out = f(&vars);
    if !out.value.is_finite() {
        return Err(Error::Numeric(format!("non-finite output at tape node {}", out.index)));
    }
    let adj = tape.adjoints(out);
    let g: Vec<f64> = vars.iter().map(|v| adj[v.index]).collect();
    if let Some(i) = g.iter().position(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient for input {i}")));
    }
    Ok((out.value, g))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut p = x.to_vec();
                let mut m = x.to_vec();
                p[i] += h;
                m[i] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    fn sample<T: Real>(x: &[T]) -> T {
        let a = (x[0] * x[1] - x[2] / x[3]).abs();
        let b = (x[0].square() + x[3].square()).sqrt();
        (a * 0.5 + b).max(x[1]) - (x[2] + 1.0).min(x[0] * 2.0)
    }

    #[test]
    fn half_squared_norm_has_identity_gradient() {
        let theta = [0.3, -1.2, 2.5];
        let (v, g) = grad(&theta, |x| {
            let mut acc = x[0].lift(0.0);
            for &xi in x {
                acc = acc + xi * xi;
            }
            acc * 0.5
        })
        .unwrap();
        assert!((v - 0.5 * (0.09 + 1.44 + 6.25)).abs() < 1e-14);
        assert_eq!(g, theta.to_vec());
    }

    #[test]
    fn constant_has_zero_gradient() {
        let (_, g) = grad(&[1.0, 2.0], |x| x[0].lift(4.0)).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn matches_finite_differences() {
        let x = [0.7, -0.4, 1.3, 2.1];
        let (v, g) = grad(&x, |v| sample(v)).unwrap();
        assert!((v - sample(&x)).abs() < 1e-14);
        let fd = central_diff(sample, &x, 1e-6);
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn kinks_use_zero_subgradient() {
        let (_, g) = grad(&[0.0], |x| x[0].abs() + x[0].sqrt()).unwrap();
        assert_eq!(g, vec![0.0]);
    }

    #[test]
    fn non_finite_output_is_an_error() {
        assert!(grad(&[0.0], |x| x[0] / x[0]).is_err());
    }
}
