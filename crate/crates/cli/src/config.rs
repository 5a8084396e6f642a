//! Run configuration file.
//!
//! ```json
//! {
//!   "name": "hard-mix-riskpo",
//!   "train": { "objective": "riskpo", "iterations": 300, "seed": 0 },
//!   "bank": { "num_questions": 40, "mixture": [0.2, 0.3, 0.5],
//!             "space": { "kind": "bandit", "answers": 64 } },
//!   "init_logit_scale": 0.0
//! }
//! ```
//!
//! Every field is optional. Training defaults: α=0.2, β=0.8, ω=0.5, B=5,
//! G=10, ε=0.2, 4 inner epochs, η=1, binary rewards. The bank defaults to the
//! hard-mix bank (40 questions, 64-answer bandit, mixture 0.2/0.3/0.5).
//! With `init_logit_scale = 0` the initial policy is uniform; otherwise its
//! logits are drawn uniformly from `[−s, s]`.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use riskpo_core::envs::generate_bank;
use riskpo_core::{streams, BankSpec, QuestionBank, TabularPolicy, TrainConfig};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Experiment name, recorded in the manifest.
    pub name: String,
    pub train: TrainConfig,
    pub bank: BankSpec,
    pub init_logit_scale: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { name: "riskpo".into(), train: TrainConfig::default(), bank: BankSpec::hard_mix(), init_logit_scale: 0.0 }
    }
}

/// 1-based line of the first `"field"` key in `text`.
fn locate_field(text: &str, field: &str) -> Option<usize> {
    let key = format!("\"{field}\"");
    text.lines().position(|l| l.contains(&key)).map(|i| i + 1)
}

impl RunConfig {
    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        if self.name.trim().is_empty() {
            return Err(("name".into(), "must be nonempty".into()));
        }
        self.train.validate().map_err(|e| match e {
            riskpo_core::Error::InvalidConfig { field, reason } => (field, reason),
            other => ("train".into(), other.to_string()),
        })?;
        self.bank.validate().map_err(|e| ("bank".to_string(), e.to_string()))?;
        if !(self.init_logit_scale >= 0.0 && self.init_logit_scale.is_finite()) {
            return Err(("init_logit_scale".into(), "must be a finite value >= 0".into()));
        }
        Ok(())
    }

    /// Parses and validates; errors name the offending field and its line.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config {
            path: origin.into(),
            line: Some(e.line()),
            message: e.to_string(),
        })?;
        cfg.validate().map_err(|(field, reason)| CliError::Config {
            path: origin.into(),
            line: locate_field(text, &field),
            message: format!("invalid `{field}`: {reason}"),
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn build_bank(&self) -> Result<QuestionBank> {
        let mut rng = streams::stream(self.train.seed, &[streams::BANK]);
        Ok(generate_bank(&self.bank, &mut rng)?)
    }

    pub fn initial_policy(&self, bank: &QuestionBank) -> Result<TabularPolicy> {
        let uniform = bank.uniform_policy()?;
        if self.init_logit_scale == 0.0 {
            return Ok(uniform);
        }
        let mut rng = streams::stream(self.train.seed, &[streams::INIT]);
        let s = self.init_logit_scale;
        let logits = (0..uniform.logits().len()).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * s).collect();
        Ok(TabularPolicy::from_logits(uniform.kind(), uniform.num_questions(), uniform.horizon(), uniform.vocab_size(), logits)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        assert_eq!(RunConfig::parse("{}", "x").unwrap(), RunConfig::default());
    }

    #[test]
    fn validation_names_field_and_line() {
        let text = "{\n  \"train\": {\n    \"epsilon\": -1.0\n  }\n}";
        let err = RunConfig::parse(text, "cfg.json").unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("cfg.json:3:"), "{msg}");
        assert!(msg.contains("epsilon"), "{msg}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn alpha_not_below_beta_names_field() {
        let text = "{\n \"train\": {\n  \"risk\": { \"alpha\": 0.9, \"beta\": 0.8 }\n }\n}";
        let msg = RunConfig::parse(text, "c").unwrap_err().to_string();
        assert!(msg.contains("alpha"), "{msg}");
        assert!(RunConfig::parse("{\"name\": \" \"}", "c").unwrap_err().to_string().contains("name"));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = RunConfig::parse("{\n \"trian\": {}\n}", "c").unwrap_err();
        assert!(err.to_string().contains("trian"));
    }

    #[test]
    fn round_trips() {
        let cfg = RunConfig { init_logit_scale: 0.5, ..RunConfig::default() };
        assert_eq!(RunConfig::parse(&cfg.to_json().unwrap(), "c").unwrap(), cfg);
        let bank = cfg.build_bank().unwrap();
        let p = cfg.initial_policy(&bank).unwrap();
        assert!(p.logits().iter().all(|z| z.abs() <= 0.5));
        assert_eq!(p, cfg.initial_policy(&bank).unwrap());
    }
}
