use std::path::Path;

use rayon::ThreadPool;
use serde::{Deserialize, Serialize};

use crate::algorithms::collect_episodes;
use crate::env::{Environment, PointEnv, PointEnvConfig};
use crate::error::{Error, Result};
use crate::funcapprox::GaussianPolicy;
use crate::rng::{derive_seed, Stream};

/// Metrics over a set of evaluation episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub episodes: usize,
    /// Mean episode return.
    pub j_r: f64,
    /// Mean episodic sum of costs.
    pub m_c: f64,
    /// Total cost over total steps.
    pub rho_c: f64,
    /// Maximum state-wise cost of each episode.
    pub d_samples: Vec<f64>,
    pub returns: Vec<f64>,
    pub costs: Vec<f64>,
    pub steps: Vec<usize>,
}

/// Evaluates the stochastic policy on episodes built by `factory`.
pub fn evaluate_env<E, F>(
    factory: &F,
    policy: &GaussianPolicy,
    n_episodes: usize,
    seed: u64,
    pool: Option<&ThreadPool>,
) -> Result<EvalReport>
where
    E: Environment,
    F: Fn() -> Result<E> + Sync,
{
    if n_episodes == 0 {
        return Err(Error::Input("evaluation needs at least one episode".into()));
    }
    let eval_seed = derive_seed(seed, Stream::Evaluation, &[]);
    let records = collect_episodes(factory, policy, eval_seed, 0, n_episodes, false, pool)?;
    let returns: Vec<f64> = records.iter().map(|r| r.episode_return()).collect();
    let costs: Vec<f64> = records.iter().map(|r| r.episode_cost()).collect();
    let d_samples: Vec<f64> = records.iter().map(|r| r.max_statewise_cost()).collect();
    let steps: Vec<usize> = records.iter().map(|r| r.len()).collect();
    let n = n_episodes as f64;
    let total_steps: usize = steps.iter().sum();
    Ok(EvalReport {
        seed,
        episodes: n_episodes,
        j_r: returns.iter().sum::<f64>() / n,
        m_c: costs.iter().sum::<f64>() / n,
        rho_c: costs.iter().sum::<f64>() / total_steps as f64,
        d_samples,
        returns,
        costs,
        steps,
    })
}

pub fn evaluate(
    policy: &GaussianPolicy,
    env: &PointEnvConfig,
    n_episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    let cfg = env.clone();
    evaluate_env(&move || PointEnv::new(cfg.clone()), policy, n_episodes, seed, None)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?)
}

fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Columns: seed, episode, return, episodic_cost, max_statewise_cost, steps.
pub fn write_eval_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["seed", "episode", "return", "episodic_cost", "max_statewise_cost", "steps"])?;
    for i in 0..report.episodes {
        w.write_record([
            report.seed.to_string(),
            i.to_string(),
            fmt_float(report.returns[i]),
            fmt_float(report.costs[i]),
            fmt_float(report.d_samples[i]),
            report.steps[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedGroup {
    pub seed: u64,
    pub samples: Vec<f64>,
    /// Sample maximum; not the population maximum.
    pub max: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostDistribution {
    pub groups: Vec<SeedGroup>,
}

impl CostDistribution {
    pub fn sample_count(&self) -> usize {
        self.groups.iter().map(|g| g.samples.len()).sum()
    }

    pub fn all_samples(&self) -> Vec<f64> {
        self.groups.iter().flat_map(|g| g.samples.iter().copied()).collect()
    }
}

/// Per-seed maximum state-wise cost samples.
pub fn cost_distribution(
    policy: &GaussianPolicy,
    env: &PointEnvConfig,
    episodes_per_seed: usize,
    seeds: &[u64],
) -> Result<CostDistribution> {
    if seeds.is_empty() {
        return Err(Error::Input("at least one seed is required".into()));
    }
    let groups = seeds
        .iter()
        .map(|&seed| {
            let r = evaluate(policy, env, episodes_per_seed, seed)?;
            let max = r.d_samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mean = r.d_samples.iter().sum::<f64>() / r.d_samples.len() as f64;
            Ok(SeedGroup { seed, samples: r.d_samples, max, mean })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CostDistribution { groups })
}

/// Columns: seed, episode, D.
pub fn write_dist_csv(path: &Path, dist: &CostDistribution) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["seed", "episode", "D"])?;
    for g in &dist.groups {
        for (i, d) in g.samples.iter().enumerate() {
            w.write_record([g.seed.to_string(), i.to_string(), fmt_float(*d)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Synthesised score against a baseline. Components whose denominator is
/// zero are left undefined and named in `undefined`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiScore {
    /// Mean of the defined components; `None` when none is defined.
    pub value: Option<f64>,
    pub reward_ratio: Option<f64>,
    pub cost_ratio: Option<f64>,
    pub rate_ratio: Option<f64>,
    pub undefined: Vec<String>,
}

pub fn psi_score(current: &EvalReport, baseline: &EvalReport) -> PsiScore {
    let ratio = |num: f64, den: f64| (den != 0.0).then(|| num / den);
    let reward_ratio = ratio(current.j_r, baseline.j_r);
    let cost_ratio = ratio(baseline.m_c, current.m_c);
    let rate_ratio = ratio(baseline.rho_c, current.rho_c);
    let named = [("j_r", reward_ratio), ("m_c", cost_ratio), ("rho_c", rate_ratio)];
    let undefined = named.iter().filter(|(_, v)| v.is_none()).map(|(n, _)| n.to_string()).collect();
    let defined: Vec<f64> = named.iter().filter_map(|(_, v)| *v).collect();
    let value = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    PsiScore { value, reward_ratio, cost_ratio, rate_ratio, undefined }
}
