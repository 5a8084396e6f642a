//! Risk-based policy optimization on synthetic tabular tasks.
//!
//! [`risk`] holds the distributional primitives (quantiles, RVaR, MVaR,
//! advantages, quantile tracking), [`policy`] the tabular softmax policies,
//! [`envs`] the question banks, verifier and bundling, [`trainer`] the
//! optimization loops, and [`diagnostics`] exact checks on small instances.

pub mod diagnostics;
pub mod envs;
pub mod error;
pub mod policy;
pub mod risk;
pub mod streams;
pub mod trainer;

pub use envs::{
    AnswerSpace, BankSpec, BundleAssignment, BundleObjective, BundleSet, Difficulty, QuestionBank, QuestionSpec,
    RewardMode, RolloutBatch,
};
pub use error::{Error, Result};
pub use policy::{PolicyKind, Response, SeqLogProb, TabularPolicy};
pub use risk::{EmpiricalDistribution, QuantileTrackerState, RiskConfig};
pub use trainer::{EvalRecord, IterationLog, Objective, RunLog, TrainConfig, TrainerState};
