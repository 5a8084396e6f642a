//! Exact checks of the theory on small enumerable instances, plus evaluation
//! metrics shared with the trainer.

pub mod covariance;
pub mod entropy;
pub mod gradient;
pub mod instances;
pub mod metrics;
pub mod psi;

use serde::{Deserialize, Serialize};

pub use covariance::{covariance_comparison, joint_score_reward, monotone_transform_check, tail_condition, CovarianceSummary, JointAtom};
pub use entropy::{entropy_step_check, first_order_entropy_change};
pub use gradient::{gradient_check, mc_gradient_convergence, GradientCheckSetup, QuantileMode};
pub use metrics::{pass_at_k, reward_metrics, RewardMetrics};
pub use psi::{psi_profile, PsiProfile, PsiSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// `|measured − reference| ≤ tolerance`
    Close,
    /// `measured ≤ reference + tolerance`
    AtMost,
    /// `measured ≥ reference − tolerance`
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub label: String,
    pub measured: f64,
    pub reference: f64,
    pub tolerance: f64,
    pub relation: Relation,
    pub passed: bool,
}

impl Comparison {
    pub fn new(label: impl Into<String>, measured: f64, reference: f64, tolerance: f64, relation: Relation) -> Self {
        let passed = match relation {
            Relation::Close => (measured - reference).abs() <= tolerance,
            Relation::AtMost => measured <= reference + tolerance,
            Relation::AtLeast => measured >= reference - tolerance,
        };
        Self { label: label.into(), measured, reference, tolerance, relation, passed: passed && measured.is_finite() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Passed,
    Failed,
    /// The instance does not satisfy the check's hypotheses; not a failure.
    PreconditionUnmet,
}

/// Outcome of one diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub status: CheckStatus,
    pub comparisons: Vec<Comparison>,
    pub notes: Vec<String>,
    pub runtime_secs: f64,
}

impl CheckReport {
    pub fn from_comparisons(name: impl Into<String>, comparisons: Vec<Comparison>) -> Self {
        let status = if comparisons.iter().all(|c| c.passed) { CheckStatus::Passed } else { CheckStatus::Failed };
        Self { name: name.into(), status, comparisons, notes: Vec::new(), runtime_secs: 0.0 }
    }

    pub fn precondition_unmet(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            status: CheckStatus::PreconditionUnmet,
            comparisons: Vec::new(),
            notes: vec![reason.into()],
            runtime_secs: 0.0,
        }
    }

    pub fn passed(&self) -> bool {
        self.status == CheckStatus::Passed
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }

    pub fn timed(mut self, start: std::time::Instant) -> Self {
        self.runtime_secs = start.elapsed().as_secs_f64();
        self
    }
}

/// Reports ordered by name, independent of the order checks finished in.
pub fn merge_reports(mut reports: Vec<CheckReport>) -> Vec<CheckReport> {
    reports.sort_by(|a, b| a.name.cmp(&b.name));
    reports
}
