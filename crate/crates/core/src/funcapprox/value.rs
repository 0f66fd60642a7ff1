use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::adam::Adam;
use super::losses::monotonic_descent_loss;
use super::mlp::{Mlp, MlpSpec};
use crate::error::{Error, Result};

/// Settings for one round of value regression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub iters: usize,
    pub minibatch: usize,
    /// Weight of the non-increasing penalty; 0 gives plain squared error.
    pub monotonic_weight: f64,
}

/// Scalar value network with its own Adam state.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueNet {
    pub net: Mlp,
    pub adam: Adam,
}

impl ValueNet {
    pub fn new<R: Rng>(
        input_dim: usize,
        hidden: Vec<usize>,
        output_gain: f64,
        lr: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let net = Mlp::init(MlpSpec::new(input_dim, hidden, 1)?, output_gain, rng);
        let adam = Adam::new(net.param_count(), lr);
        Ok(Self { net, adam })
    }

    pub fn predict(&self, obs: ArrayView2<f64>) -> Result<Vec<f64>> {
        Ok(self.net.forward(obs)?.into_raw_vec_and_offset().0)
    }

    /// Regresses onto `targets` using minibatches drawn from `rows` (all rows
    /// when `None`). Minibatch indices are sorted so episode order survives
    /// for the monotonic penalty. Returns the last minibatch loss.
    pub fn fit<R: Rng>(
        &mut self,
        obs: &Array2<f64>,
        targets: &[f64],
        episode_ids: &[usize],
        rows: Option<&[usize]>,
        cfg: &FitConfig,
        rng: &mut R,
    ) -> Result<f64> {
        if targets.len() != obs.nrows() || episode_ids.len() != obs.nrows() {
            return Err(Error::Input("value targets must align with observations".into()));
        }
        let all: Vec<usize>;
        let pool: &[usize] = match rows {
            Some(r) => r,
            None => {
                all = (0..obs.nrows()).collect();
                &all
            }
        };
        if pool.is_empty() {
            return Ok(0.0);
        }
        let mut params = self.net.to_flat().0;
        let mut last = 0.0;
        for _ in 0..cfg.iters {
            let batch: Vec<usize> = if pool.len() <= cfg.minibatch {
                pool.to_vec()
            } else {
                let mut pick = rand::seq::index::sample(rng, pool.len(), cfg.minibatch).into_vec();
                pick.sort_unstable();
                pick.into_iter().map(|i| pool[i]).collect()
            };
            let cache = self.net.forward_rows(obs, &batch)?;
            let pred: Vec<f64> = cache.output.iter().copied().collect();
            let tgt: Vec<f64> = batch.iter().map(|&i| targets[i]).collect();
            let ids: Vec<usize> = batch.iter().map(|&i| episode_ids[i]).collect();
            let (loss, g) = monotonic_descent_loss(&pred, &tgt, &ids, cfg.monotonic_weight)?;
            let g = Array2::from_shape_vec((g.len(), 1), g).map_err(|e| Error::Input(e.to_string()))?;
            let grad = self.net.backward(&cache, g.view())?;
            self.adam.step(&mut params, &grad);
            self.net.set_flat(&params)?;
            last = loss;
        }
        if !last.is_finite() {
            return Err(Error::Numeric("value regression diverged".into()));
        }
        Ok(last)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fits_a_smooth_target() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let mut v = ValueNet::new(1, vec![16, 16], 1.0, 1e-2, &mut r).unwrap();
        let x = Array2::from_shape_fn((200, 1), |(i, _)| i as f64 / 100.0 - 1.0);
        let y: Vec<f64> = x.iter().map(|t| t.sin()).collect();
        let ids = vec![0; 200];
        let cfg = FitConfig { iters: 1500, minibatch: 64, monotonic_weight: 0.0 };
        v.fit(&x, &y, &ids, None, &cfg, &mut r).unwrap();
        let pred = v.predict(x.view()).unwrap();
        let mse: f64 = pred.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 200.0;
        assert!(mse < 1e-3, "mse {mse}");
    }

    #[test]
    fn zero_output_layer_stays_zero_on_zero_targets() {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let mut v = ValueNet::new(3, vec![8], 0.0, 1e-3, &mut r).unwrap();
        let x = Array2::from_shape_fn((40, 3), |_| r.random_range(-1.0..1.0));
        let cfg = FitConfig { iters: 20, minibatch: 16, monotonic_weight: 1.0 };
        v.fit(&x, &[0.0; 40], &[0; 40], None, &cfg, &mut r).unwrap();
        assert!(v.predict(x.view()).unwrap().iter().all(|p| *p == 0.0));
    }
}
