use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rayon::ThreadPool;

use crate::batch::EpisodeRecord;
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::funcapprox::GaussianPolicy;
use crate::mmdp::Augmenter;
use crate::rng::{derive_seed, stream, Stream};

/// Runs one full episode, appending the running max `M` to each observation.
pub fn run_episode<E: Environment>(
    env: &mut E,
    policy: &GaussianPolicy,
    episode_seed: u64,
    rng: &mut ChaCha8Rng,
    deterministic: bool,
) -> Result<EpisodeRecord> {
    let horizon = env.horizon();
    let mut rec = EpisodeRecord::default();
    let mut obs = env.reset(episode_seed)?;
    let mut aug = Augmenter::new();
    for _ in 0..horizon {
        let mut feat = obs;
        feat.push(aug.running_max());
        let (action, logp) = if deterministic {
            let a = policy.mean_action(&feat)?;
            let lp = policy.log_prob(&feat, &a)?;
            (a, lp)
        } else {
            policy.sample(&feat, rng)?
        };
        let tr = env.step(&action, rng)?;
        let d = aug.push(tr.cost)?;
        rec.obs.push(feat);
        rec.actions.push(action);
        rec.rewards.push(tr.reward);
        rec.costs.push(tr.cost.max(0.0));
        rec.increments.push(d);
        rec.log_probs.push(logp);
        obs = tr.obs;
        if tr.terminal {
            rec.terminal = true;
            break;
        }
    }
    Ok(rec)
}

/// Seeds for episode `index` of collection round `round`: the reset seed and
/// the per-episode noise stream.
pub fn episode_streams(seed: u64, round: u64, index: u64) -> (u64, ChaCha8Rng) {
    let mut rng = stream(seed, Stream::Rollout, &[round, index]);
    let reset = rng.next_u64();
    (derive_seed(reset, Stream::Reset, &[]), rng)
}

/// Collects `n_episodes` episodes. Results are ordered by episode index, so
/// the output does not depend on the number of worker threads.
pub fn collect_episodes<E, F>(
    factory: &F,
    policy: &GaussianPolicy,
    seed: u64,
    round: u64,
    n_episodes: usize,
    deterministic: bool,
    pool: Option<&ThreadPool>,
) -> Result<Vec<EpisodeRecord>>
where
    E: Environment,
    F: Fn() -> Result<E> + Sync,
{
    let one = |i: usize| -> Result<EpisodeRecord> {
        let mut env = factory()?;
        let (reset, mut rng) = episode_streams(seed, round, i as u64);
        run_episode(&mut env, policy, reset, &mut rng, deterministic)
    };
    let out: Result<Vec<_>> = match pool {
        Some(p) if p.current_num_threads() > 1 => {
            p.install(|| (0..n_episodes).into_par_iter().map(one).collect())
        }
        _ => (0..n_episodes).map(one).collect(),
    };
    let out = out?;
    if out.iter().any(|r| r.is_empty()) {
        return Err(Error::Input("environment produced an empty episode".into()));
    }
    Ok(out)
}

pub fn build_pool(workers: usize) -> Result<ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{PointEnv, PointEnvConfig};
    use rand::SeedableRng;

    fn policy(cfg: &PointEnvConfig) -> GaussianPolicy {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        GaussianPolicy::new(cfg.obs_dim() + 1, 2, vec![8], -0.5, &mut r).unwrap()
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let cfg = PointEnvConfig { max_episode_steps: 30, ..Default::default() };
        let factory = || PointEnv::new(cfg.clone());
        let p = policy(&cfg);
        let serial = collect_episodes(&factory, &p, 5, 0, 6, false, None).unwrap();
        let pool = build_pool(3).unwrap();
        let parallel = collect_episodes(&factory, &p, 5, 0, 6, false, Some(&pool)).unwrap();
        assert_eq!(serial, parallel);
        assert!(serial.iter().all(|e| e.terminal && e.len() == 30));
    }

    #[test]
    fn running_max_is_appended_and_consistent() {
        let cfg = PointEnvConfig { max_episode_steps: 50, hazard_count: 3, ..Default::default() };
        let factory = || PointEnv::new(cfg.clone());
        let eps = collect_episodes(&factory, &policy(&cfg), 1, 2, 4, false, None).unwrap();
        for e in eps {
            let mut m = 0.0;
            for t in 0..e.len() {
                assert_eq!(*e.obs[t].last().unwrap(), m);
                m += e.increments[t];
            }
            let max_c = e.costs.iter().copied().fold(0.0, f64::max);
            assert!((e.max_statewise_cost() - max_c).abs() < 1e-12);
        }
    }
}
