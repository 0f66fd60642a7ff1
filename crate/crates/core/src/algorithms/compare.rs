use std::path::Path;

use super::trainer::{train, RunSummary};
use super::Algorithm;
use crate::bench::{psi_score, PsiScore};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CompareCell {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub outcome: std::result::Result<RunSummary, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareSummary {
    pub cells: Vec<CompareCell>,
    /// Score of each finished run against the TRPO run with the same seed.
    pub psi: Vec<(Algorithm, u64, PsiScore)>,
}

impl CompareSummary {
    pub fn failures(&self) -> impl Iterator<Item = &CompareCell> {
        self.cells.iter().filter(|c| c.outcome.is_err())
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.16e}")).unwrap_or_default()
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?)
}

/// Trains every (algorithm, seed) cell into `out/<algorithm>_seed<seed>` and
/// writes `comparison.csv`, `psi.csv` and `failures.csv`. A failing cell is
/// recorded and the sweep continues.
pub fn compare(exp: &ExperimentConfig, out: &Path) -> Result<CompareSummary> {
    std::fs::create_dir_all(out)?;
    let mut cells = Vec::new();
    for &algorithm in &exp.compare.algorithms {
        for &seed in &exp.compare.seeds {
            let mut cfg = exp.train.clone();
            cfg.algorithm = algorithm;
            cfg.seed = seed;
            let dir = out.join(format!("{algorithm}_seed{seed}"));
            let outcome = train(&exp.env, &cfg, &exp.hyper, &dir, false).map_err(|e| {
                log::error!("{algorithm} seed {seed} failed: {e}");
                e.to_string()
            });
            cells.push(CompareCell { algorithm, seed, outcome });
        }
    }

    let mut w = writer(&out.join("comparison.csv"))?;
    w.write_record(["algorithm", "seed", "iteration", "J_r", "M_c", "rho_c"])?;
    for c in &cells {
        if let Ok(run) = &c.outcome {
            for r in &run.reports {
                w.write_record([
                    c.algorithm.to_string(),
                    c.seed.to_string(),
                    r.iteration.to_string(),
                    format!("{:.16e}", r.j_r),
                    format!("{:.16e}", r.m_c),
                    format!("{:.16e}", r.rho_c),
                ])?;
            }
        }
    }
    w.flush()?;

    let mut psi = Vec::new();
    for c in &cells {
        let Ok(run) = &c.outcome else { continue };
        let base = cells.iter().find(|b| b.algorithm == Algorithm::Trpo && b.seed == c.seed);
        if let Some(CompareCell { outcome: Ok(base), .. }) = base {
            psi.push((c.algorithm, c.seed, psi_score(&run.eval, &base.eval)));
        }
    }
    let mut w = writer(&out.join("psi.csv"))?;
    w.write_record(["algorithm", "seed", "psi", "j_r_ratio", "m_c_ratio", "rho_c_ratio", "undefined"])?;
    for (a, s, p) in &psi {
        w.write_record([
            a.to_string(),
            s.to_string(),
            opt(p.value),
            opt(p.reward_ratio),
            opt(p.cost_ratio),
            opt(p.rate_ratio),
            p.undefined.join(";"),
        ])?;
    }
    w.flush()?;

    let mut w = writer(&out.join("failures.csv"))?;
    w.write_record(["algorithm", "seed", "error"])?;
    for c in &cells {
        if let Err(e) = &c.outcome {
            w.write_record([c.algorithm.to_string(), c.seed.to_string(), e.clone()])?;
        }
    }
    w.flush()?;
    if cells.iter().all(|c| c.outcome.is_err()) {
        return Err(Error::Numeric("every compare cell failed".into()));
    }
    Ok(CompareSummary { cells, psi })
}
