use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::ThreadPool;
use serde_json::json;

use super::rollout::{build_pool, collect_episodes};
use super::update::{
    ascpo_update, cpo_update, lagrange_ascent, lagrangian_update, pascpo_update, scpo_update, trpo_update,
    UpdateMode, UpdateOutcome,
};
use super::{Algorithm, IterationReport, TrainConfig};
use crate::batch::EpisodeBatch;
use crate::bench::{evaluate, write_eval_csv, EvalReport};
use crate::env::{PointEnv, PointEnvConfig};
use crate::error::{Error, Result};
use crate::estimators::{
    compute_advantages, gae, surrogate_report, AdvantageConfig, BoundHyper, SurrogateReport,
};
use crate::funcapprox::{subsample_targets, Adam, Checkpoint, FitConfig, GaussianPolicy, ValueNet};
use crate::rng::{stream, Stream};

/// Policy, value nets and optimiser state for one training run.
pub struct Trainer {
    env: PointEnvConfig,
    cfg: TrainConfig,
    hyper: BoundHyper,
    policy: GaussianPolicy,
    value: ValueNet,
    cost_value: ValueNet,
    policy_adam: Adam,
    lagrange: f64,
    iteration: usize,
    total_cost: f64,
    total_steps: f64,
    pool: Option<ThreadPool>,
}

fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().sum::<f64>() / x.len() as f64
    }
}

impl Trainer {
    pub fn new(env: PointEnvConfig, cfg: TrainConfig, hyper: BoundHyper) -> Result<Self> {
        env.validate()?;
        cfg.validate()?;
        hyper.validate()?;
        let obs_dim = env.obs_dim() + 1;
        let policy = GaussianPolicy::new(
            obs_dim,
            2,
            cfg.policy_hidden.clone(),
            cfg.log_std_init,
            &mut stream(cfg.seed, Stream::Init, &[0]),
        )?;
        let value = ValueNet::new(
            obs_dim,
            cfg.value_hidden.clone(),
            1.0,
            cfg.value_lr,
            &mut stream(cfg.seed, Stream::Init, &[1]),
        )?;
        // Zero output layer: the cost value starts at exactly 0 everywhere.
        let cost_value = ValueNet::new(
            obs_dim,
            cfg.value_hidden.clone(),
            0.0,
            cfg.value_lr,
            &mut stream(cfg.seed, Stream::Init, &[2]),
        )?;
        let policy_adam = Adam::new(policy.param_count(), cfg.proximal.lr);
        let pool = if cfg.workers > 1 { Some(build_pool(cfg.workers)?) } else { None };
        Ok(Self {
            env,
            cfg,
            hyper,
            policy,
            value,
            cost_value,
            policy_adam,
            lagrange: 0.0,
            iteration: 0,
            total_cost: 0.0,
            total_steps: 0.0,
            pool,
        })
    }

    pub fn policy(&self) -> &GaussianPolicy {
        &self.policy
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn env_config(&self) -> &PointEnvConfig {
        &self.env
    }

    pub fn hyper(&self) -> &BoundHyper {
        &self.hyper
    }

    pub fn lagrange_multiplier(&self) -> f64 {
        self.lagrange
    }

    /// Collects the batch for the current iteration with the current policy.
    pub fn collect(&self) -> Result<EpisodeBatch> {
        let env = self.env.clone();
        let factory = move || PointEnv::new(env.clone());
        let n = self.cfg.episodes_per_epoch(self.env.max_episode_steps);
        let records = collect_episodes(
            &factory,
            &self.policy,
            self.cfg.seed,
            self.iteration as u64,
            n,
            false,
            self.pool.as_ref(),
        )?;
        EpisodeBatch::from_episodes(&records, self.env.max_episode_steps)
    }

    fn fit_config(&self, monotonic_weight: f64) -> FitConfig {
        FitConfig { iters: self.cfg.value_iters, minibatch: self.cfg.value_minibatch, monotonic_weight }
    }

    /// One full iteration: rollouts, value fitting, policy update.
    pub fn iterate(&mut self) -> Result<IterationReport> {
        let start = Instant::now();
        let it = self.iteration as u64;
        let seed = self.cfg.seed;
        let batch = self.collect()?;
        let t_collect = start.elapsed();
        let obs = batch.obs.view();
        let ids = batch.episode_ids();
        let alg = self.cfg.algorithm;

        let values = self.value.predict(obs)?;
        let uses_cost_net = alg != Algorithm::Trpo;
        let cost_pred = if uses_cost_net { self.cost_value.predict(obs)? } else { vec![0.0; batch.len()] };
        let adv_cfg = AdvantageConfig {
            gamma: self.cfg.gamma,
            lambda: self.cfg.lambda,
            cost_gamma: 1.0,
            standardize_reward: true,
        };
        let increment_values =
            if alg.fits_increment_values() { cost_pred.clone() } else { vec![0.0; batch.len()] };
        let adv = compute_advantages(&batch, &adv_cfg, &values, &increment_values, None)?;

        let value_loss = self.value.fit(
            &batch.obs,
            &adv.reward_targets,
            &ids,
            None,
            &self.fit_config(0.0),
            &mut stream(seed, Stream::Minibatch, &[it, 0]),
        )?;
        let mut raw_cost_adv = Vec::new();
        let cost_value_loss = match alg {
            Algorithm::Trpo => 0.0,
            Algorithm::Cpo => {
                raw_cost_adv =
                    gae(&batch.costs, &cost_pred, &batch.episodes, None, self.cfg.gamma, self.cfg.lambda)?.0;
                let targets = batch.discounted_cost_to_go(self.cfg.gamma);
                self.cost_value.fit(
                    &batch.obs,
                    &targets,
                    &ids,
                    None,
                    &self.fit_config(0.0),
                    &mut stream(seed, Stream::Minibatch, &[it, 1]),
                )?
            }
            _ => {
                let targets = batch.cost_value_targets();
                let rows = subsample_targets(
                    &targets,
                    self.cfg.cost_zero_keep,
                    &mut stream(seed, Stream::Subsample, &[it]),
                )?;
                self.cost_value.fit(
                    &batch.obs,
                    &targets,
                    &ids,
                    Some(&rows),
                    &self.fit_config(self.cfg.monotonic_weight),
                    &mut stream(seed, Stream::Minibatch, &[it, 1]),
                )?
            }
        };
        let fitted =
            if alg.fits_increment_values() { self.cost_value.predict(obs)? } else { vec![0.0; batch.len()] };

        let t_fit = start.elapsed();
        let step = self.cfg.step_config();
        let hyper = self.hyper;
        let update: Result<(UpdateOutcome, SurrogateReport)> = match alg {
            Algorithm::Ascpo => ascpo_update(&self.policy, &batch, &adv, &fitted, &hyper, &step),
            Algorithm::Scpo => scpo_update(&self.policy, &batch, &adv, &fitted, &hyper, &step),
            Algorithm::Trpo => surrogate_report(&batch, &adv, &fitted, &hyper)
                .and_then(|(rep, _)| trpo_update(&self.policy, &batch, &adv, &step).map(|o| (o, rep))),
            Algorithm::Cpo => surrogate_report(&batch, &adv, &fitted, &hyper).and_then(|(rep, _)| {
                let starts = batch.discounted_cost_to_go(self.cfg.gamma);
                let c = mean(&batch.start_indices().iter().map(|&i| starts[i]).collect::<Vec<_>>()) - hyper.w;
                cpo_update(&self.policy, &batch, &adv.reward_adv, &raw_cost_adv, c, &step).map(|o| (o, rep))
            }),
            Algorithm::TrpoLagrangian => {
                surrogate_report(&batch, &adv, &fitted, &hyper).and_then(|(rep, _)| {
                    self.lagrange =
                        lagrange_ascent(self.lagrange, self.cfg.lagrangian_lr, rep.e_hat, hyper.w);
                    lagrangian_update(&self.policy, &batch, &adv, self.lagrange, &step).map(|o| (o, rep))
                })
            }
            Algorithm::Pascpo => surrogate_report(&batch, &adv, &fitted, &hyper).and_then(|(rep, _)| {
                self.lagrange = lagrange_ascent(self.lagrange, self.cfg.lagrangian_lr, rep.e_hat, hyper.w);
                pascpo_update(
                    &self.policy,
                    &batch,
                    &adv,
                    &fitted,
                    &hyper,
                    self.lagrange,
                    &self.cfg.proximal,
                    &mut self.policy_adam,
                    self.cfg.target_kl,
                    self.cfg.log_std_floor,
                    &mut stream(seed, Stream::Minibatch, &[it, 2]),
                )
            }),
        };
        let (outcome, report) = match update {
            Ok(pair) => pair,
            Err(e) => {
                log::warn!("iteration {it}: update skipped: {e}");
                let rep = surrogate_report(&batch, &adv, &fitted, &hyper).map(|r| r.0).unwrap_or_default();
                (
                    UpdateOutcome {
                        policy: self.policy.clone(),
                        mode: UpdateMode::Skipped,
                        accepted: false,
                        backtracks: 0,
                        mean_kl: 0.0,
                        x_delta: 0.0,
                        reward_delta: 0.0,
                        lambda: 0.0,
                        nu: 0.0,
                        c: rep.c,
                    },
                    rep,
                )
            }
        };
        if !outcome.policy.to_flat().is_finite()
            || !self.value.net.to_flat().is_finite()
            || !self.cost_value.net.to_flat().is_finite()
        {
            return Err(Error::Numeric(format!("non-finite parameters after iteration {it}")));
        }
        self.policy = outcome.policy;
        log::debug!(
            "iteration {it}: collect {:.3}s fit {:.3}s update {:.3}s",
            t_collect.as_secs_f64(),
            (t_fit - t_collect).as_secs_f64(),
            (start.elapsed() - t_fit).as_secs_f64()
        );

        let costs_total: f64 = batch.costs.iter().sum();
        self.total_cost += costs_total;
        self.total_steps += batch.len() as f64;
        self.iteration += 1;
        Ok(IterationReport {
            iteration: it as usize,
            steps: batch.len(),
            episodes: batch.n_episodes(),
            j_r: mean(&batch.episode_returns()),
            m_c: mean(&batch.episode_costs()),
            rho_c: costs_total / batch.len() as f64,
            cum_rho_c: self.total_cost / self.total_steps,
            e_hat: report.e_hat,
            mv_hat: report.mv_hat,
            vm_sq_hat: report.vm_sq_hat,
            eps_d: report.eps_d,
            // Unconstrained updates carry no constraint value of their own.
            c: match alg {
                Algorithm::Trpo | Algorithm::TrpoLagrangian => report.c,
                _ => outcome.c,
            },
            x_value: report.x_value,
            x_delta: outcome.x_delta,
            reward_delta: outcome.reward_delta,
            mode: outcome.mode,
            accepted: outcome.accepted,
            backtracks: outcome.backtracks,
            mean_kl: outcome.mean_kl,
            dual_lambda: outcome.lambda,
            dual_nu: outcome.nu,
            lagrange_multiplier: self.lagrange,
            value_loss,
            cost_value_loss,
            wallclock: start.elapsed().as_secs_f64(),
        })
    }

    /// Snapshot of everything needed to continue training bit-identically.
    pub fn checkpoint(&self) -> Checkpoint {
        let specs = json!({
            "policy": self.policy.spec(),
            "value": self.value.net.spec(),
            "cost_value": self.cost_value.net.spec(),
        });
        let mut ck = Checkpoint::new(self.cfg.seed, self.iteration, self.cfg.algorithm.as_str(), specs);
        ck.push("policy", &self.policy.to_flat());
        ck.push("value", &self.value.net.to_flat());
        ck.push("value_adam", &self.value.adam.to_flat());
        ck.push("cost_value", &self.cost_value.net.to_flat());
        ck.push("cost_value_adam", &self.cost_value.adam.to_flat());
        ck.push("policy_adam", &self.policy_adam.to_flat());
        ck.push("state", &[self.lagrange, self.total_cost, self.total_steps]);
        ck
    }

    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        let h = &ck.header;
        if h.seed != self.cfg.seed || h.algorithm != self.cfg.algorithm.as_str() {
            return Err(Error::Config(format!(
                "checkpoint is for {} seed {}, run is {} seed {}",
                h.algorithm, h.seed, self.cfg.algorithm, self.cfg.seed
            )));
        }
        let adam_err = |n: &str| Error::Input(format!("checkpoint segment {n} has the wrong size"));
        self.policy.set_flat(ck.segment("policy")?)?;
        self.value.net.set_flat(ck.segment("value")?)?;
        if !self.value.adam.load_flat(ck.segment("value_adam")?) {
            return Err(adam_err("value_adam"));
        }
        self.cost_value.net.set_flat(ck.segment("cost_value")?)?;
        if !self.cost_value.adam.load_flat(ck.segment("cost_value_adam")?) {
            return Err(adam_err("cost_value_adam"));
        }
        if !self.policy_adam.load_flat(ck.segment("policy_adam")?) {
            return Err(adam_err("policy_adam"));
        }
        match ck.segment("state")? {
            [l, c, s] => {
                self.lagrange = *l;
                self.total_cost = *c;
                self.total_steps = *s;
            }
            _ => return Err(adam_err("state")),
        }
        self.iteration = h.iteration;
        Ok(())
    }
}

/// Rebuilds the policy stored in the checkpoint at `stem`. Seed and
/// algorithm come from the checkpoint header; the network shapes from `cfg`.
pub fn policy_from_checkpoint(
    env: &PointEnvConfig,
    cfg: &TrainConfig,
    hyper: &BoundHyper,
    stem: &Path,
) -> Result<GaussianPolicy> {
    let ck = Checkpoint::load(stem)?;
    let algorithm: Algorithm = ck.header.algorithm.parse()?;
    let cfg = TrainConfig { seed: ck.header.seed, algorithm, ..cfg.clone() };
    let mut trainer = Trainer::new(env.clone(), cfg, *hyper)?;
    trainer.restore(&ck)?;
    Ok(trainer.policy().clone())
}

/// Files produced by [`train`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub reports: Vec<IterationReport>,
    pub eval: EvalReport,
    pub policy: GaussianPolicy,
}

fn csv_writer(path: &Path, append: bool) -> Result<csv::Writer<File>> {
    let file = OpenOptions::new().create(true).write(true).append(append).truncate(!append).open(path)?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file))
}

/// Keeps the header and the rows of iterations before `upto`.
fn truncate_log(path: &Path, upto: usize) -> Result<()> {
    let text = fs::read_to_string(path)?;
    let mut kept = String::new();
    for (i, line) in text.lines().enumerate() {
        let keep =
            i == 0 || line.split(',').next().and_then(|x| x.parse::<usize>().ok()).is_some_and(|k| k < upto);
        if keep {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    fs::write(path, kept)?;
    Ok(())
}

fn checkpoint_stem(dir: &Path, iteration: usize) -> PathBuf {
    dir.join(format!("iter_{iteration:06}"))
}

/// Runs a full training job into `out`, writing `iters.csv`, `timing.csv`,
/// `eval.csv` and `checkpoints/`. With `resume`, training restarts from
/// `checkpoints/latest` when it exists.
pub fn train(
    env: &PointEnvConfig,
    cfg: &TrainConfig,
    hyper: &BoundHyper,
    out: &Path,
    resume: bool,
) -> Result<RunSummary> {
    let ck_dir = out.join("checkpoints");
    fs::create_dir_all(&ck_dir)?;
    let mut trainer = Trainer::new(env.clone(), cfg.clone(), *hyper)?;
    let iters_path = out.join("iters.csv");
    let timing_path = out.join("timing.csv");
    let latest = ck_dir.join("latest");
    let resumed = resume && latest.with_extension("json").exists();
    if resumed {
        trainer.restore(&Checkpoint::load(&latest)?)?;
        truncate_log(&iters_path, trainer.iteration())?;
        truncate_log(&timing_path, trainer.iteration())?;
        log::info!("resuming at iteration {}", trainer.iteration());
    }
    let mut iters = csv_writer(&iters_path, resumed)?;
    let mut timing = csv_writer(&timing_path, resumed)?;
    if !resumed {
        iters.write_record(IterationReport::CSV_HEADER)?;
        timing.write_record(["iteration", "wallclock"])?;
        iters.flush()?;
        timing.flush()?;
        let ck = trainer.checkpoint();
        ck.save(&checkpoint_stem(&ck_dir, 0))?;
        ck.save(&latest)?;
    }
    fs::write(
        out.join("run_config.json"),
        serde_json::to_string_pretty(&json!({ "env": env, "train": cfg, "hyper": hyper }))?,
    )?;

    let mut reports = Vec::new();
    while trainer.iteration() < cfg.epochs {
        let last_good = trainer.checkpoint();
        let report = match trainer.iterate() {
            Ok(r) => r,
            Err(e) => {
                if e.is_numeric() {
                    last_good.save(&ck_dir.join("last_good"))?;
                }
                return Err(e);
            }
        };
        iters.write_record(report.csv_row())?;
        iters.flush()?;
        timing.write_record([report.iteration.to_string(), format!("{:.6}", report.wallclock)])?;
        timing.flush()?;
        log::info!(
            "iter {:4} J_r {:9.4} M_c {:8.4} E {:7.4} c {:8.4} mode {} kl {:.4}",
            report.iteration,
            report.j_r,
            report.m_c,
            report.e_hat,
            report.c,
            report.mode.as_str(),
            report.mean_kl
        );
        let done = trainer.iteration();
        reports.push(report);
        if done % cfg.checkpoint_every == 0 || done == cfg.epochs {
            let ck = trainer.checkpoint();
            ck.save(&checkpoint_stem(&ck_dir, done))?;
            ck.save(&latest)?;
        }
    }
    let eval = evaluate(trainer.policy(), env, cfg.eval_episodes, cfg.seed)?;
    write_eval_csv(&out.join("eval.csv"), &eval)?;
    Ok(RunSummary { dir: out.to_path_buf(), reports, eval, policy: trainer.policy().clone() })
}
