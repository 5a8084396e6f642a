//! One-axis sweeps over seeds, run in parallel with each run owning its
//! directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use riskpo_core::{Objective, RiskConfig};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::runner::{prepare_output_dir, run_experiment, RunSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    QuantileLevels,
    BundleSize,
    Omega,
    Objective,
}

impl FromStr for Axis {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quantile_levels" => Ok(Axis::QuantileLevels),
            "bundle_size" => Ok(Axis::BundleSize),
            "omega" => Ok(Axis::Omega),
            "objective" => Ok(Axis::Objective),
            other => Err(CliError::Usage(format!(
                "unknown sweep axis `{other}` (quantile_levels, bundle_size, omega, objective)"
            ))),
        }
    }
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::QuantileLevels => "quantile_levels",
            Axis::BundleSize => "bundle_size",
            Axis::Omega => "omega",
            Axis::Objective => "objective",
        }
    }

    /// Applies one axis value (`"0.1:0.9"` for quantile levels) to `cfg`.
    pub fn apply(self, cfg: &mut RunConfig, value: &str) -> Result<()> {
        let bad = |why: &str| CliError::Usage(format!("bad {} value `{value}`: {why}", self.name()));
        match self {
            Axis::QuantileLevels => {
                let (a, b) = value.split_once(':').ok_or_else(|| bad("expected alpha:beta"))?;
                let alpha = a.trim().parse().map_err(|_| bad("alpha is not a number"))?;
                let beta = b.trim().parse().map_err(|_| bad("beta is not a number"))?;
                cfg.train.risk = RiskConfig::new(alpha, beta, cfg.train.risk.omega)?;
            }
            Axis::BundleSize => cfg.train.bundle_size = value.parse().map_err(|_| bad("not an integer"))?,
            Axis::Omega => {
                cfg.train.risk.omega = value.parse().map_err(|_| bad("not a number"))?;
            }
            Axis::Objective => cfg.train.objective = Objective::from_str(value)?,
        }
        cfg.validate().map_err(|(field, reason)| bad(&format!("{field}: {reason}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    pub base: RunConfig,
    pub axis: Axis,
    pub values: Vec<String>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub value: String,
    pub seed: u64,
    pub summary: RunSummary,
}

fn cell_dir(root: &Path, axis: Axis, value: &str, seed: u64) -> PathBuf {
    let safe: String = value.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '_' { c } else { '-' }).collect();
    root.join(format!("{}={safe}", axis.name())).join(format!("seed{seed}"))
}

/// Runs every (value, seed) cell on `jobs` threads and writes
/// `summary.csv` and `entropy_trajectories.csv` once all have finished.
pub fn run_sweep(plan: &SweepPlan, root: &Path, overwrite: bool, jobs: usize) -> Result<Vec<SweepCell>> {
    if plan.values.is_empty() || plan.seeds.is_empty() {
        return Err(CliError::Usage("a sweep needs at least one value and one seed".into()));
    }
    let mut cells = Vec::new();
    for value in &plan.values {
        for &seed in &plan.seeds {
            let mut cfg = plan.base.clone();
            plan.axis.apply(&mut cfg, value)?;
            cfg.train.seed = seed;
            cells.push((value.clone(), seed, cfg));
        }
    }
    prepare_output_dir(root, overwrite)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {jobs} workers: {e}")))?;
    let command = format!("sweep --axis {}", plan.axis.name());
    let results: Vec<Result<SweepCell>> = pool.install(|| {
        cells
            .par_iter()
            .map(|(value, seed, cfg)| {
                let dir = cell_dir(root, plan.axis, value, *seed);
                let summary = run_experiment(cfg, &dir, false, &command)?;
                Ok(SweepCell { value: value.clone(), seed: *seed, summary })
            })
            .collect()
    });
    let cells = results.into_iter().collect::<Result<Vec<_>>>()?;

    let mut summary = csv::Writer::from_path(root.join("summary.csv"))?;
    summary.write_record([
        plan.axis.name(),
        "seed",
        "mean_reward",
        "entropy",
        "rvar_lower",
        "mvar",
        "pass@1",
        "pass@8",
        "pass@16",
        "avg@k",
    ])?;
    let mut traj = csv::Writer::from_path(root.join("entropy_trajectories.csv"))?;
    traj.write_record([plan.axis.name(), "seed", "iteration", "entropy"])?;
    for c in &cells {
        let (l, e) = (&c.summary.last, &c.summary.last_eval);
        summary.write_record([
            c.value.clone(),
            c.seed.to_string(),
            l.mean_reward.to_string(),
            l.entropy.to_string(),
            l.rvar_lower.to_string(),
            l.mvar.to_string(),
            e.pass_at_1.to_string(),
            e.pass_at_8.to_string(),
            e.pass_at_16.to_string(),
            e.avg_at_k.to_string(),
        ])?;
        for (k, h) in c.summary.entropy.iter().enumerate() {
            traj.write_record([c.value.clone(), c.seed.to_string(), (k + 1).to_string(), h.to_string()])?;
        }
    }
    summary.flush().map_err(CliError::io(root))?;
    traj.flush().map_err(CliError::io(root))?;
    Ok(cells)
}

/// Reads a sweep's `summary.csv` back as raw records.
pub fn read_summary(root: &Path) -> Result<Vec<Vec<String>>> {
    let path = root.join("summary.csv");
    let text = fs::read_to_string(&path).map_err(CliError::io(&path))?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    rdr.records().map(|r| Ok(r?.iter().map(String::from).collect())).collect()
}
