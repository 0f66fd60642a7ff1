use serde::{Deserialize, Serialize};

/// Adam optimiser state over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// Descends along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }

    /// State packed as `[t, m..., v...]` for checkpointing.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(1 + 2 * self.m.len());
        out.push(self.t as f64);
        out.extend(&self.m);
        out.extend(&self.v);
        out
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> bool {
        let n = self.m.len();
        if flat.len() != 1 + 2 * n {
            return false;
        }
        self.t = flat[0] as u64;
        self.m.copy_from_slice(&flat[1..1 + n]);
        self.v.copy_from_slice(&flat[1 + n..]);
        true
    }
}
