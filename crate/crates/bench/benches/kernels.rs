use ascpo_core::bench::exact_moments;
use ascpo_core::env::{GridMdp, PolicyTable};
use ascpo_core::funcapprox::{FitConfig, GaussianPolicy, ValueNet};
use ascpo_core::solver::{conjugate_gradient, kl_hessian_vector_product, CgConfig};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

const ROWS: usize = 4000;
const OBS: usize = 8;

fn inputs(rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((ROWS, OBS), |_| rng.random_range(-1.0..1.0))
}

fn policy_kernels(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let obs = inputs(&mut rng);
    let policy = GaussianPolicy::new(OBS, 2, vec![64, 64], -0.5, &mut rng).unwrap();
    c.bench_function("policy_evaluate_4000x64x64", |b| {
        b.iter(|| black_box(policy.evaluate(obs.view()).unwrap()))
    });
    let eval = policy.evaluate(obs.view()).unwrap();
    let v: Vec<f64> = (0..policy.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
    c.bench_function("fisher_vector_product_4000x64x64", |b| {
        b.iter(|| black_box(kl_hessian_vector_product(&policy, &eval, &v, 0.01).unwrap()))
    });
    c.bench_function("cg_20_iters_on_fvp", |b| {
        let cfg = CgConfig { max_iters: 20, tol: 0.0 };
        b.iter(|| {
            black_box(
                conjugate_gradient(
                    |x: &[f64]| kl_hessian_vector_product(&policy, &eval, x, 0.01).map(|f| f.0),
                    &v,
                    &cfg,
                )
                .unwrap(),
            )
        })
    });
    let obs_row: Vec<f64> = obs.row(0).to_vec();
    c.bench_function("policy_sample_single_row", |b| {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        b.iter(|| black_box(policy.sample(&obs_row, &mut r).unwrap()))
    });
}

fn value_fit(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let obs = inputs(&mut rng);
    let targets: Vec<f64> = (0..ROWS).map(|i| (i % 100) as f64 / 100.0).collect();
    let ids: Vec<usize> = (0..ROWS).map(|i| i / 100).collect();
    let net = ValueNet::new(OBS, vec![64, 64], 1.0, 1e-3, &mut rng).unwrap();
    let cfg = FitConfig { iters: 10, minibatch: 512, monotonic_weight: 1.0 };
    c.bench_function("value_fit_10x512", |b| {
        b.iter_batched(
            || (net.clone(), ChaCha8Rng::seed_from_u64(3)),
            |(mut n, mut r)| black_box(n.fit(&obs, &targets, &ids, None, &cfg, &mut r).unwrap()),
            BatchSize::SmallInput,
        )
    });
}

fn enumeration(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mdp = GridMdp::random(4, 2, 4, &mut rng);
    let pol = PolicyTable::random(4, 2, &mut rng);
    c.bench_function("exact_moments_4s2a_h4", |b| b.iter(|| black_box(exact_moments(&mdp, &pol).unwrap())));
}

criterion_group!(benches, policy_kernels, value_fit, enumeration);
criterion_main!(benches);
