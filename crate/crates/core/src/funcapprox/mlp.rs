use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::FlatParams;
use crate::error::{Error, Result};

/// Layer widths of a tanh MLP with a linear output layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Result<Self> {
        let spec = Self { input_dim, hidden, output_dim };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_default_hidden(input_dim: usize, output_dim: usize) -> Result<Self> {
        Self::new(input_dim, vec![64, 64], output_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Input(format!("all MLP dimensions must be >= 1: {self:?}")));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for every affine layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &h in self.hidden.iter().chain(std::iter::once(&self.output_dim)) {
            dims.push((prev, h));
            prev = h;
        }
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Activations kept from a forward pass for backprop and tangent propagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `acts[0]` is the input, `acts[l]` the output of hidden layer `l`.
    acts: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

impl ForwardCache {
    pub fn rows(&self) -> usize {
        self.output.nrows()
    }
}

/// Weights are stored `fan_in x fan_out`; the flat ordering is, per layer,
/// the weight matrix in row-major order followed by the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

fn orthogonal<R: Rng>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Array2<f64> {
    // Gram-Schmidt on the taller orientation, then transpose back if needed.
    let (r, c) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    let mut m = Array2::<f64>::zeros((r, c));
    for j in 0..c {
        loop {
            let mut v: Array1<f64> = (0..r).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            for k in 0..j {
                let q = m.column(k);
                let proj = q.dot(&v);
                v.scaled_add(-proj, &q);
            }
            let n = v.dot(&v).sqrt();
            if n > 1e-8 {
                m.column_mut(j).assign(&(v / n));
                break;
            }
        }
    }
    let m = m * gain;
    if rows >= cols {
        m
    } else {
        m.reversed_axes()
    }
}

impl Mlp {
    pub fn zeros(spec: MlpSpec) -> Self {
        let dims = spec.layer_dims();
        Self {
            weights: dims.iter().map(|&(i, o)| Array2::zeros((i, o))).collect(),
            biases: dims.iter().map(|&(_, o)| Array1::zeros(o)).collect(),
            spec,
        }
    }

    /// Orthogonal init, gain sqrt(2) on hidden layers and `output_gain` on the
    /// last layer; biases start at zero.
    pub fn init<R: Rng>(spec: MlpSpec, output_gain: f64, rng: &mut R) -> Self {
        let mut net = Self::zeros(spec);
        let last = net.weights.len() - 1;
        for (l, w) in net.weights.iter_mut().enumerate() {
            let gain = if l == last { output_gain } else { std::f64::consts::SQRT_2 };
            if gain != 0.0 {
                *w = orthogonal(w.nrows(), w.ncols(), gain, rng);
            }
        }
        net
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn to_flat(&self) -> FlatParams {
        let mut v = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            v.extend(w.iter());
            v.extend(b.iter());
        }
        FlatParams(v)
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Input(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for x in w.iter_mut() {
                *x = flat[off];
                off += 1;
            }
            for x in b.iter_mut() {
                *x = flat[off];
                off += 1;
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.spec.input_dim {
            return Err(Error::Input(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.spec.input_dim
            )));
        }
        Ok(())
    }

    fn finite(a: &Array2<f64>, layer: usize) -> Result<()> {
        if a.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numeric(format!("non-finite activation in layer {layer}")))
        }
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(&x)?;
        let last = self.weights.len() - 1;
        let mut acts = Vec::with_capacity(last + 1);
        acts.push(x.to_owned());
        for l in 0..last {
            let mut z = acts[l].dot(&self.weights[l]);
            z += &self.biases[l];
            z.mapv_inplace(f64::tanh);
            Self::finite(&z, l)?;
            acts.push(z);
        }
        let mut out = acts[last].dot(&self.weights[last]);
        out += &self.biases[last];
        Self::finite(&out, last)?;
        Ok(ForwardCache { acts, output: out })
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x)?.output)
    }

    /// Forward pass for a single input row.
    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Input(e.to_string()))?;
        Ok(self.forward(view)?.into_raw_vec_and_offset().0)
    }

    /// Gradient of `sum(grad_out * output)` with respect to the flat parameters.
    pub fn backward(&self, cache: &ForwardCache, grad_out: ArrayView2<f64>) -> Result<FlatParams> {
        if grad_out.dim() != cache.output.dim() {
            return Err(Error::Input("output gradient shape mismatch".into()));
        }
        let n_layers = self.weights.len();
        let mut grads_w: Vec<Array2<f64>> = Vec::with_capacity(n_layers);
        let mut grads_b: Vec<Array1<f64>> = Vec::with_capacity(n_layers);
        let mut delta = grad_out.to_owned();
        for l in (0..n_layers).rev() {
            grads_w.push(cache.acts[l].t().dot(&delta));
            grads_b.push(delta.sum_axis(Axis(0)));
            if l > 0 {
                let mut back = delta.dot(&self.weights[l].t());
                back.zip_mut_with(&cache.acts[l], |d, a| *d *= 1.0 - a * a);
                Self::finite(&back, l - 1)?;
                delta = back;
            }
        }
        grads_w.reverse();
        grads_b.reverse();
        let mut flat = Vec::with_capacity(self.param_count());
        for (w, b) in grads_w.iter().zip(&grads_b) {
            flat.extend(w.iter());
            flat.extend(b.iter());
        }
        Ok(FlatParams(flat))
    }

    /// Directional derivative of the outputs along a parameter tangent.
    pub fn jvp(&self, cache: &ForwardCache, tangent: &[f64]) -> Result<Array2<f64>> {
        if tangent.len() != self.param_count() {
            return Err(Error::Input("tangent length mismatch".into()));
        }
        let n_layers = self.weights.len();
        let mut off = 0;
        let mut t: Option<Array2<f64>> = None;
        for (l, &(i, o)) in self.spec.layer_dims().iter().enumerate() {
            let dw = ArrayView2::from_shape((i, o), &tangent[off..off + i * o])
                .map_err(|e| Error::Input(e.to_string()))?;
            off += i * o;
            let db = ndarray::ArrayView1::from(&tangent[off..off + o]);
            off += o;
            let mut dz = cache.acts[l].dot(&dw);
            if let Some(prev) = &t {
                dz += &prev.dot(&self.weights[l]);
            }
            dz += &db;
            if l + 1 < n_layers {
                dz.zip_mut_with(&cache.acts[l + 1], |d, a| *d *= 1.0 - a * a);
            }
            t = Some(dz);
        }
        Ok(t.expect("at least one layer"))
    }

    /// Plain re-evaluation used to cross-check the cached path.
    pub fn forward_reference(&self, x: &[f64]) -> Vec<f64> {
        let mut h: Vec<f64> = x.to_vec();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = b.to_vec();
            for (i, hi) in h.iter().enumerate() {
                for (j, zj) in z.iter_mut().enumerate() {
                    *zj += hi * w[[i, j]];
                }
            }
            if l < last {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            h = z;
        }
        h
    }

    /// Sub-view of rows, convenient for minibatching.
    pub fn forward_rows(&self, x: &Array2<f64>, rows: &[usize]) -> Result<ForwardCache> {
        let sub = x.select(Axis(0), rows);
        self.forward_cached(sub.view())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    fn random_input(n: usize, d: usize, r: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((n, d), |_| r.random_range(-2.0..2.0))
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(MlpSpec::new(3, vec![4, 4], 2).unwrap());
        let out = net.forward(Array2::ones((5, 3)).view()).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_unit_is_tanh() {
        let mut net = Mlp::zeros(MlpSpec::new(1, vec![1], 1).unwrap());
        // Hidden weight 1, output weight 1: y = tanh(x).
        net.set_flat(&[1.0, 0.0, 1.0, 0.0]).unwrap();
        for x in [-1.5, 0.0, 0.3, 2.0] {
            assert!((net.forward_one(&[x]).unwrap()[0] - f64::tanh(x)).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_reference_evaluator() {
        let mut r = rng();
        let net = Mlp::init(MlpSpec::new(5, vec![7, 6], 3).unwrap(), 1.0, &mut r);
        let x = random_input(10, 5, &mut r);
        let out = net.forward(x.view()).unwrap();
        for i in 0..10 {
            let reference = net.forward_reference(&x.row(i).to_vec());
            for j in 0..3 {
                assert!((out[[i, j]] - reference[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn flat_round_trip_is_exact() {
        let mut r = rng();
        let net = Mlp::init(MlpSpec::new(4, vec![5], 2).unwrap(), 0.5, &mut r);
        let flat = net.to_flat();
        let mut other = Mlp::zeros(net.spec().clone());
        other.set_flat(&flat).unwrap();
        assert_eq!(other, net);
        assert_eq!(other.to_flat(), flat);
    }

    #[test]
    fn orthogonal_init_has_orthonormal_columns() {
        let mut r = rng();
        let w = orthogonal(8, 5, 1.0, &mut r);
        let g = w.t().dot(&w);
        for i in 0..5 {
            for j in 0..5 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g[[i, j]] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_and_jvp_match_finite_differences() {
        let mut r = rng();
        let net = Mlp::init(MlpSpec::new(3, vec![6, 5], 2).unwrap(), 1.0, &mut r);
        let x = random_input(7, 3, &mut r);
        let weights = random_input(7, 2, &mut r);
        let cache = net.forward_cached(x.view()).unwrap();
        let g = net.backward(&cache, weights.view()).unwrap();
        let theta = net.to_flat();
        let loss = |p: &[f64]| {
            let mut n = net.clone();
            n.set_flat(p).unwrap();
            (&n.forward(x.view()).unwrap() * &weights).sum()
        };
        let h = 1e-5;
        for i in 0..theta.len() {
            let mut p = theta.0.clone();
            p[i] += h;
            let fp = loss(&p);
            p[i] -= 2.0 * h;
            let fm = loss(&p);
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + g[i].abs()), "coord {i}: {fd} vs {}", g[i]);
        }
        // jvp . weights must equal g . tangent
        let tangent: Vec<f64> = (0..theta.len()).map(|_| r.random_range(-1.0..1.0)).collect();
        let jv = net.jvp(&cache, &tangent).unwrap();
        let lhs = (&jv * &weights).sum();
        let rhs: f64 = g.iter().zip(&tangent).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn dimension_mismatch_is_an_input_error() {
        let net = Mlp::zeros(MlpSpec::new(3, vec![2], 1).unwrap());
        assert!(matches!(net.forward(Array2::zeros((1, 4)).view()), Err(Error::Input(_))));
        assert!(MlpSpec::new(0, vec![2], 1).is_err());
    }

    #[test]
    fn non_finite_input_reports_layer() {
        let mut r = rng();
        let net = Mlp::init(MlpSpec::new(2, vec![3], 1).unwrap(), 1.0, &mut r);
        let x = Array2::from_elem((1, 2), f64::NAN);
        match net.forward(x.view()) {
            Err(Error::Numeric(m)) => assert!(m.contains("layer 0")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
