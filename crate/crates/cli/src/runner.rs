//! Single training run with its on-disk artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use riskpo_core::trainer::{train_with, TrainEvent};
use riskpo_core::{EvalRecord, IterationLog};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const METRICS_HEADER: [&str; 9] =
    ["iteration", "mean_reward", "entropy", "rvar_lower", "mvar", "q_alpha", "q_beta", "clip_fraction", "grad_norm"];
pub const EVALS_HEADER: [&str; 5] = ["iteration", "pass@1", "pass@8", "pass@16", "avg@k"];

const ARTIFACTS: [&str; 5] = ["config.json", "bank.json", "metrics.csv", "evals.csv", "policy_final.json"];

/// Creates `dir`, or empties it when `overwrite` is set.
pub fn prepare_output_dir(dir: &Path, overwrite: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir).map_err(CliError::io(dir))?.next().is_some();
        if non_empty {
            if !overwrite {
                return Err(CliError::OutputNotEmpty(dir.to_path_buf()));
            }
            fs::remove_dir_all(dir).map_err(CliError::io(dir))?;
        }
    }
    fs::create_dir_all(dir).map_err(CliError::io(dir))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metrics_record(r: &IterationLog) -> [String; 9] {
    [
        r.iteration.to_string(),
        r.mean_reward.to_string(),
        r.entropy.to_string(),
        r.rvar_lower.to_string(),
        r.mvar.to_string(),
        opt(r.q_alpha),
        opt(r.q_beta),
        r.clip_fraction.to_string(),
        r.grad_norm.to_string(),
    ]
}

pub fn evals_record(e: &EvalRecord) -> [String; 5] {
    [
        e.iteration.to_string(),
        e.pass_at_1.to_string(),
        e.pass_at_8.to_string(),
        e.pass_at_16.to_string(),
        e.avg_at_k.to_string(),
    ]
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(CliError::io(path))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub tool_version: String,
    pub seed: u64,
    pub objective: String,
    pub command: String,
    /// SHA-256 of each artifact, keyed by file name.
    pub sha256: BTreeMap<String, String>,
}

/// Final numbers of a finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub last: IterationLog,
    pub last_eval: EvalRecord,
    pub entropy: Vec<f64>,
}

/// Trains per `cfg` and writes `config.json`, `bank.json`, `metrics.csv`,
/// `evals.csv`, `policy_final.json` and `manifest.json` into `out`.
/// Metric rows are flushed as they are produced.
pub fn run_experiment(cfg: &RunConfig, out: &Path, overwrite: bool, command: &str) -> Result<RunSummary> {
    cfg.validate().map_err(|(field, reason)| CliError::Config {
        path: "<config>".into(),
        line: None,
        message: format!("invalid `{field}`: {reason}"),
    })?;
    prepare_output_dir(out, overwrite)?;
    let bank = cfg.build_bank()?;
    let initial = cfg.initial_policy(&bank)?;
    write_file(&out.join("config.json"), &cfg.to_json()?)?;
    write_file(&out.join("bank.json"), &bank.to_json()?)?;

    let mut metrics = csv::Writer::from_path(out.join("metrics.csv"))?;
    let mut evals = csv::Writer::from_path(out.join("evals.csv"))?;
    metrics.write_record(METRICS_HEADER)?;
    evals.write_record(EVALS_HEADER)?;
    let mut sink_err = None;
    let mut record = |event: TrainEvent<'_>| -> Result<()> {
        match event {
            TrainEvent::Iteration(row) => {
                metrics.write_record(metrics_record(row))?;
                metrics.flush().map_err(CliError::io(out))?;
            }
            TrainEvent::Eval(e) => {
                evals.write_record(evals_record(e))?;
                evals.flush().map_err(CliError::io(out))?;
            }
        }
        Ok(())
    };
    let log = train_with(&cfg.train, &bank, initial, |event| {
        record(event).map_err(|e| {
            let msg = e.to_string();
            sink_err = Some(e);
            riskpo_core::Error::InvalidConfig { field: "output".into(), reason: msg }
        })
    });
    let log = match sink_err {
        Some(e) => return Err(e),
        None => log?,
    };
    write_file(&out.join("policy_final.json"), &log.final_policy.to_json()?)?;

    let mut sha256 = BTreeMap::new();
    for name in ARTIFACTS {
        sha256.insert(name.to_string(), sha256_file(&out.join(name))?);
    }
    let manifest = Manifest {
        name: cfg.name.clone(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.train.seed,
        objective: cfg.train.objective.as_str().into(),
        command: command.into(),
        sha256,
    };
    let mut f = fs::File::create(out.join("manifest.json")).map_err(CliError::io(out))?;
    f.write_all(serde_json::to_string_pretty(&manifest)?.as_bytes()).map_err(CliError::io(out))?;

    Ok(RunSummary {
        dir: out.to_path_buf(),
        last: log.iterations.last().cloned().expect("at least one iteration"),
        last_eval: log.evals.last().cloned().expect("final evaluation"),
        entropy: log.iterations.iter().map(|r| r.entropy).collect(),
    })
}

/// Re-hashes every artifact listed in a run's manifest.
pub fn verify_manifest(dir: &Path) -> Result<bool> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(CliError::io(&path))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    for (name, digest) in &manifest.sha256 {
        if &sha256_file(&dir.join(name))? != digest {
            return Ok(false);
        }
    }
    Ok(true)
}
