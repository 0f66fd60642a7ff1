//! `ascpo-lab`: train, evaluate, verify and compare from the command line.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 numeric abort,
//! 3 verification failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use ascpo_core::algorithms::{compare, policy_from_checkpoint, train};
use ascpo_core::bench::{cost_distribution, evaluate, write_dist_csv, write_eval_csv};
use ascpo_core::config::{Command, ExperimentConfig, RunConfig, THREADS_ENV};
use ascpo_core::verify::{run_suites, VerifyHooks};
use ascpo_core::Error;
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "ascpo-lab", version, about = "Absolute state-wise constrained policy optimization lab")]
struct Cli {
    /// JSON experiment file with `env`, `train`, `hyper` and `compare` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Overrides `train.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `train.workers`; capped by ASCPO_LAB_THREADS.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Print the default configuration as JSON and exit.
    #[arg(long)]
    print_defaults: bool,
    #[command(subcommand)]
    command: Option<Sub>,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Train one algorithm and write iters.csv, checkpoints/ and eval.csv.
    Train {
        /// Continue from `checkpoints/latest` in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate the latest checkpoint; writes eval.csv and dist.csv.
    Eval,
    /// Run the invariant suites and write oracle_report.json.
    Verify {
        /// Run a single suite.
        #[arg(long)]
        suite: Option<String>,
    },
    /// Train every (algorithm, seed) cell and write comparison CSVs.
    Compare,
}

/// Failure classes and their exit codes.
#[derive(Debug)]
enum Failure {
    Config(anyhow::Error),
    Numeric(anyhow::Error),
    Verification(Vec<String>),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Numeric(_) => 2,
            Failure::Verification(_) => 3,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numeric() {
            Failure::Numeric(e.into())
        } else {
            Failure::Config(e.into())
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<Error>() {
            Some(inner) if inner.is_numeric() => Failure::Numeric(e),
            _ => Failure::Config(e),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(e) => eprintln!("error: {e:#}"),
                Failure::Numeric(e) => eprintln!("numeric abort: {e:#}"),
                Failure::Verification(names) => {
                    eprintln!("verification failed: {}", names.join(", "));
                }
            }
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if cli.print_defaults {
        println!("{}", ExperimentConfig::defaults_json());
        return Ok(());
    }
    let Some(sub) = cli.command else {
        return Err(Failure::Config(anyhow::anyhow!("no command given; see --help")));
    };
    let command = match sub {
        Sub::Train { .. } => Command::Train,
        Sub::Eval => Command::Eval,
        Sub::Verify { .. } => Command::Verify,
        Sub::Compare => Command::Compare,
    };
    let rc = RunConfig {
        command,
        config_path: cli.config,
        out_dir: cli.out,
        seed: cli.seed,
        workers: cli.workers,
    };
    let exp = rc.resolve(std::env::var(THREADS_ENV).ok().as_deref())?;
    std::fs::create_dir_all(&rc.out_dir)
        .with_context(|| format!("output directory {} is not writable", rc.out_dir.display()))?;
    match sub {
        Sub::Train { resume } => cmd_train(&exp, &rc.out_dir, resume),
        Sub::Eval => cmd_eval(&exp, &rc.out_dir),
        Sub::Verify { suite } => cmd_verify(suite.as_deref(), &rc.out_dir),
        Sub::Compare => cmd_compare(&exp, &rc.out_dir),
    }
}

fn cmd_train(exp: &ExperimentConfig, out: &Path, resume: bool) -> Result<(), Failure> {
    let run = train(&exp.env, &exp.train, &exp.hyper, out, resume)?;
    println!(
        "{} seed {}: {} iterations, eval J_r {:.4} M_c {:.4} rho_c {:.4}",
        exp.train.algorithm,
        exp.train.seed,
        run.reports.len(),
        run.eval.j_r,
        run.eval.m_c,
        run.eval.rho_c
    );
    Ok(())
}

fn cmd_eval(exp: &ExperimentConfig, out: &Path) -> Result<(), Failure> {
    let stem = out.join("checkpoints").join("latest");
    let policy = policy_from_checkpoint(&exp.env, &exp.train, &exp.hyper, &stem)
        .with_context(|| format!("loading {}", stem.display()))?;
    let report = evaluate(&policy, &exp.env, exp.train.eval_episodes, exp.train.seed)?;
    write_eval_csv(&out.join("eval.csv"), &report)?;
    let dist = cost_distribution(&policy, &exp.env, exp.train.eval_episodes, &exp.compare.seeds)?;
    write_dist_csv(&out.join("dist.csv"), &dist)?;
    println!("J_r {:.4} M_c {:.4} rho_c {:.4}", report.j_r, report.m_c, report.rho_c);
    for g in &dist.groups {
        println!("seed {:>4}: mean D {:.4} max D {:.4}", g.seed, g.mean, g.max);
    }
    Ok(())
}

fn cmd_verify(suite: Option<&str>, out: &Path) -> Result<(), Failure> {
    let report = run_suites(suite, &VerifyHooks::default())?;
    println!("{:<12} {:<48} {:>6} {:>14} {:>14}", "suite", "invariant", "result", "metric", "threshold");
    for r in &report.results {
        println!(
            "{:<12} {:<48} {:>6} {:>14.6e} {:>14.6e}",
            r.suite,
            r.name,
            if r.pass { "pass" } else { "FAIL" },
            r.metric,
            r.threshold
        );
    }
    report.write_json(&out.join("oracle_report.json"))?;
    if report.all_pass() {
        Ok(())
    } else {
        Err(Failure::Verification(report.failing()))
    }
}

fn cmd_compare(exp: &ExperimentConfig, out: &Path) -> Result<(), Failure> {
    let summary = compare(exp, out)?;
    for (alg, seed, psi) in &summary.psi {
        match psi.value {
            Some(v) => println!("psi {alg} seed {seed}: {v:.4}"),
            None => println!("psi {alg} seed {seed}: undefined ({})", psi.undefined.join(", ")),
        }
    }
    for c in summary.failures() {
        if let Err(e) = &c.outcome {
            log::warn!("{} seed {} failed: {e}", c.algorithm, c.seed);
        }
    }
    Ok(())
}
