//! Covariance between the normalized score and transformed rewards, on the
//! exact joint of `(R, log π̃)` under `x ∼ bank`, `y ∼ π`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::envs::{verify, QuestionBank, RewardMode};
use crate::error::{Error, Result};
use crate::policy::TabularPolicy;
use crate::risk::{covariance, exact_quantile, layer_cake_covariance, mvar_advantage, risk_seeking_advantage, EmpiricalDistribution, RiskConfig};

use super::{CheckReport, Comparison, Relation};

const SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointAtom {
    pub reward: f64,
    /// Length-normalized log-probability of the response.
    pub score: f64,
    pub prob: f64,
}

pub fn joint_score_reward(policy: &TabularPolicy, bank: &QuestionBank, mode: RewardMode, cap: usize) -> Result<Vec<JointAtom>> {
    bank.check_policy(policy)?;
    let mut joint = Vec::new();
    for (q, w) in bank.questions.iter().zip(bank.question_probs()) {
        if w == 0.0 {
            continue;
        }
        for (y, p) in policy.enumerate_responses(q.id, cap)? {
            let score = policy.sequence_log_prob(q.id, &y)?.normalized;
            joint.push(JointAtom { reward: verify(q, &y, mode)?, score, prob: w * p });
        }
    }
    Ok(joint)
}

/// `(r, P(R = r), E[score | R = r])` for each reward atom, ascending.
pub fn conditional_scores(joint: &[JointAtom]) -> Vec<(f64, f64, f64)> {
    let mut sorted: Vec<&JointAtom> = joint.iter().filter(|a| a.prob > 0.0).collect();
    sorted.sort_by(|a, b| a.reward.total_cmp(&b.reward));
    let mut out: Vec<(f64, f64, f64)> = Vec::new();
    for a in sorted {
        match out.last_mut() {
            Some((r, m, s)) if *r == a.reward => {
                *m += a.prob;
                *s += a.prob * a.score;
            }
            _ => out.push((a.reward, a.prob, a.prob * a.score)),
        }
    }
    for (_, m, s) in &mut out {
        *s /= *m;
    }
    out
}

fn reward_distribution(joint: &[JointAtom]) -> Result<EmpiricalDistribution> {
    EmpiricalDistribution::from_weighted(joint.iter().map(|a| (a.reward, a.prob)))
}

/// Whether `ψ(r) = E[score | R = r]` is nonincreasing on atoms up to the
/// α-quantile and nondecreasing from the β-quantile, with `ψ` at both
/// quantiles at least `E[score]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailCondition {
    pub lower: bool,
    pub upper: bool,
    pub notes: Vec<String>,
}

impl TailCondition {
    pub fn holds(&self) -> bool {
        self.lower && self.upper
    }
}

pub fn tail_condition(joint: &[JointAtom], cfg: &RiskConfig) -> Result<TailCondition> {
    cfg.validate()?;
    let dist = reward_distribution(joint)?;
    let qa = exact_quantile(&dist, cfg.alpha)?;
    let qb = exact_quantile(&dist, cfg.beta)?;
    let psi = conditional_scores(joint);
    let mean: f64 = joint.iter().map(|a| a.prob * a.score).sum();
    let mut notes = Vec::new();

    let below: Vec<f64> = psi.iter().filter(|(r, _, _)| *r <= qa).map(|t| t.2).collect();
    let above: Vec<f64> = psi.iter().filter(|(r, _, _)| *r >= qb).map(|t| t.2).collect();
    let mut lower = below.windows(2).all(|w| w[1] <= w[0] + SLACK);
    if !lower {
        notes.push("score is not nonincreasing below the alpha-quantile".into());
    }
    let at = |q: f64| psi.iter().find(|t| t.0 == q).map(|t| t.2).expect("quantiles are atoms");
    if at(qa) < mean - SLACK {
        lower = false;
        notes.push("score at the alpha-quantile is below its mean".into());
    }
    let mut upper = above.windows(2).all(|w| w[1] >= w[0] - SLACK);
    if !upper {
        notes.push("score is not nondecreasing above the beta-quantile".into());
    }
    if at(qb) < mean - SLACK {
        upper = false;
        notes.push("score at the beta-quantile is below its mean".into());
    }
    Ok(TailCondition { lower, upper, notes })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSummary {
    pub q_alpha: f64,
    pub q_beta: f64,
    pub mean: f64,
    pub mvar: f64,
    pub risk_seeking: f64,
}

fn transformed(joint: &[JointAtom], f: impl Fn(f64) -> Result<f64>) -> Result<Vec<(f64, f64, f64)>> {
    joint.iter().map(|a| Ok((f(a.reward)?, a.score, a.prob))).collect()
}

/// Covariance of the score with the mean, MVaR and risk-seeking
/// advantages. Under the tail condition the MVaR covariance is at most the
/// mean's and the risk-seeking covariance at least the MVaR one. Each value
/// is computed directly and through the layer-cake sum.
pub fn covariance_comparison(joint: &[JointAtom], cfg: &RiskConfig) -> Result<(CheckReport, CovarianceSummary)> {
    let start = Instant::now();
    let cond = tail_condition(joint, cfg)?;
    let dist = reward_distribution(joint)?;
    let qa = exact_quantile(&dist, cfg.alpha)?;
    let qb = exact_quantile(&dist, cfg.beta)?;
    let mean_joint = transformed(joint, Ok)?;
    let mvar_joint = transformed(joint, |r| mvar_advantage(r, qa, qb, cfg.omega))?;
    let rs_joint = transformed(joint, |r| risk_seeking_advantage(r, qa, qb, cfg.omega))?;
    let summary = CovarianceSummary {
        q_alpha: qa,
        q_beta: qb,
        mean: covariance(&mean_joint)?,
        mvar: covariance(&mvar_joint)?,
        risk_seeking: covariance(&rs_joint)?,
    };
    if !cond.holds() {
        let mut report = CheckReport::precondition_unmet("covariance", cond.notes.join("; "));
        report.runtime_secs = start.elapsed().as_secs_f64();
        return Ok((report, summary));
    }
    let comparisons = vec![
        Comparison::new("cov(score, mvar adv) <= cov(score, reward)", summary.mvar, summary.mean, SLACK, Relation::AtMost),
        Comparison::new("cov(score, risk-seeking adv) >= cov(score, mvar adv)", summary.risk_seeking, summary.mvar, SLACK, Relation::AtLeast),
        Comparison::new("layer-cake mean", layer_cake_covariance(&mean_joint)?, summary.mean, 1e-10, Relation::Close),
        Comparison::new("layer-cake mvar", layer_cake_covariance(&mvar_joint)?, summary.mvar, 1e-10, Relation::Close),
        Comparison::new("layer-cake risk-seeking", layer_cake_covariance(&rs_joint)?, summary.risk_seeking, 1e-10, Relation::Close),
    ];
    Ok((CheckReport::from_comparisons("covariance", comparisons).timed(start), summary))
}

/// Two reward transforms that agree up to the β-quantile, where `g1` grows
/// at least as fast as `g2` above it: under the upper-tail condition,
/// `Cov(score, g1(R)) ≥ Cov(score, g2(R))`.
///
/// Errors when the transforms violate their preconditions on the support;
/// reports an unmet precondition when the upper-tail condition fails.
pub fn monotone_transform_check<G1, G2>(joint: &[JointAtom], g1: G1, g2: G2, cfg: &RiskConfig) -> Result<CheckReport>
where
    G1: Fn(f64) -> f64,
    G2: Fn(f64) -> f64,
{
    let start = Instant::now();
    let dist = reward_distribution(joint)?;
    let qb = exact_quantile(&dist, cfg.beta)?;
    let atoms = dist.values();
    for w in atoms.windows(2) {
        if g1(w[1]) < g1(w[0]) - SLACK || g2(w[1]) < g2(w[0]) - SLACK {
            return Err(Error::PreconditionUnmet(format!("transforms are not nondecreasing on [{}, {}]", w[0], w[1])));
        }
        if w[0] >= qb && g1(w[1]) - g1(w[0]) < g2(w[1]) - g2(w[0]) - SLACK {
            return Err(Error::PreconditionUnmet(format!("g1 grows slower than g2 on [{}, {}]", w[0], w[1])));
        }
    }
    if let Some(r) = atoms.iter().find(|&&r| r <= qb && (g1(r) - g2(r)).abs() > SLACK) {
        return Err(Error::PreconditionUnmet(format!("transforms differ at {r}, below the beta-quantile {qb}")));
    }
    let cond = tail_condition(joint, cfg)?;
    if !cond.upper {
        let mut report = CheckReport::precondition_unmet("transform", cond.notes.join("; "));
        report.runtime_secs = start.elapsed().as_secs_f64();
        return Ok(report);
    }
    let c1 = covariance(&transformed(joint, |r| Ok(g1(r)))?)?;
    let c2 = covariance(&transformed(joint, |r| Ok(g2(r)))?)?;
    Ok(CheckReport::from_comparisons("transform", vec![Comparison::new("cov(score, g1) >= cov(score, g2)", c1, c2, SLACK, Relation::AtLeast)])
        .timed(start))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::instances::{credit_bank, sample_tail_instance};
    use crate::diagnostics::CheckStatus;
    use crate::policy::PolicyKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn joint_of(credit: Vec<f64>, logits: Vec<f64>) -> Vec<JointAtom> {
        let n = credit.len();
        let bank = credit_bank(vec![credit]).unwrap();
        let policy = TabularPolicy::from_logits(PolicyKind::Bandit, 1, 1, n, logits).unwrap();
        joint_score_reward(&policy, &bank, RewardMode::Fractional, 1024).unwrap()
    }

    #[test]
    fn independent_score_gives_equal_zero_covariances() {
        let joint = joint_of(vec![1.0, 0.2, 0.5, 0.7], vec![0.0; 4]);
        let (report, s) = covariance_comparison(&joint, &RiskConfig::default()).unwrap();
        assert!(report.passed(), "{report:?}");
        assert!(s.mean.abs() < 1e-15 && s.mvar.abs() < 1e-15 && s.risk_seeking.abs() < 1e-15);
    }

    #[test]
    fn u_shaped_instances_satisfy_the_ordering() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = RiskConfig::default();
        for _ in 0..20 {
            let (bank, policy, _) = sample_tail_instance(&mut rng, 8, &cfg, 1000).unwrap();
            let joint = joint_score_reward(&policy, &bank, RewardMode::Fractional, 1024).unwrap();
            let (report, s) = covariance_comparison(&joint, &cfg).unwrap();
            assert!(report.passed(), "{report:?}");
            assert!(s.mvar <= s.mean + 1e-12);
        }
    }

    #[test]
    fn violated_tail_condition_is_not_a_failure() {
        // Score decreasing in reward everywhere breaks the upper tail.
        let joint = joint_of(vec![1.0, 0.0, 0.25, 0.5, 0.75], vec![-2.0, 2.0, 1.0, 0.0, -1.0]);
        let cfg = RiskConfig::default();
        assert!(!tail_condition(&joint, &cfg).unwrap().upper);
        let (report, _) = covariance_comparison(&joint, &cfg).unwrap();
        assert_eq!(report.status, CheckStatus::PreconditionUnmet);
    }

    #[test]
    fn conditional_scores_merge_equal_rewards() {
        let joint = vec![
            JointAtom { reward: 1.0, score: -1.0, prob: 0.25 },
            JointAtom { reward: 0.0, score: -2.0, prob: 0.5 },
            JointAtom { reward: 1.0, score: -3.0, prob: 0.25 },
        ];
        assert_eq!(conditional_scores(&joint), vec![(0.0, 0.5, -2.0), (1.0, 0.5, -2.0)]);
    }

    #[test]
    fn transform_ordering() {
        let cfg = RiskConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (bank, policy, _) = sample_tail_instance(&mut rng, 8, &cfg, 1000).unwrap();
        let joint = joint_score_reward(&policy, &bank, RewardMode::Fractional, 1024).unwrap();
        let dist = reward_distribution(&joint).unwrap();
        let qb = exact_quantile(&dist, cfg.beta).unwrap();
        // Identity grows faster than the capped reward above the β-quantile.
        let report = monotone_transform_check(&joint, |r| r, |r| r.min(qb), &cfg).unwrap();
        assert!(report.passed(), "{report:?}");
        // Swapping the roles breaks the growth precondition when atoms exist above qb.
        if dist.values().iter().any(|&r| r > qb) {
            assert!(monotone_transform_check(&joint, |r| r.min(qb), |r| r, &cfg).is_err());
        }
        // Transforms that differ below the quantile are rejected.
        assert!(monotone_transform_check(&joint, |r| r, |r| r + 1.0, &cfg).is_err());
    }
}
