//! Binned profile of the normalized log-probability against the reward
//! quantile level.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{sample_categorical, verify, QuestionBank, RewardMode};
use crate::error::{Error, Result};
use crate::policy::TabularPolicy;
use crate::risk::{EmpiricalDistribution, RiskConfig};

use super::covariance::{joint_score_reward, JointAtom};

const SLACK: f64 = 1e-12;

pub enum PsiSource<'a, R: Rng + ?Sized> {
    /// Exact joint over the enumerated answer space.
    Enumerate { cap: usize },
    /// Monte-Carlo draws; every occupied bin needs `min_per_bin` samples.
    Samples { rng: &'a mut R, samples: usize, min_per_bin: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiProfile {
    /// Bin edges on the quantile-level axis `[0, 1]`.
    pub edges: Vec<f64>,
    /// Mean normalized log-probability per bin (`None` when empty).
    pub psi: Vec<Option<f64>>,
    pub mean_reward: Vec<Option<f64>>,
    /// Number of atoms (enumeration) or samples falling in each bin.
    pub counts: Vec<usize>,
    pub mass: Vec<f64>,
    pub lower_nonincreasing: bool,
    pub upper_nondecreasing: bool,
}

/// Each point sits at the mid-level of its reward atom, `F(r−) + P(R = r)/2`.
pub fn psi_profile<R: Rng + ?Sized>(
    policy: &TabularPolicy,
    bank: &QuestionBank,
    mode: RewardMode,
    source: PsiSource<'_, R>,
    bins: usize,
    cfg: &RiskConfig,
) -> Result<PsiProfile> {
    cfg.validate()?;
    if bins == 0 {
        return Err(Error::InvalidConfig { field: "bins".into(), reason: "must be >= 1".into() });
    }
    let (points, min_per_bin) = match source {
        PsiSource::Enumerate { cap } => (joint_score_reward(policy, bank, mode, cap)?, 0),
        PsiSource::Samples { rng, samples, min_per_bin } => {
            if samples == 0 {
                return Err(Error::InsufficientSamples("no samples requested".into()));
            }
            bank.check_policy(policy)?;
            let weights = bank.question_probs();
            let w = 1.0 / samples as f64;
            let mut pts = Vec::with_capacity(samples);
            for _ in 0..samples {
                let q = &bank.questions[sample_categorical(&weights, rng.random())];
                let y = policy.sample_response(q.id, rng)?;
                let score = policy.sequence_log_prob(q.id, &y)?.normalized;
                pts.push(JointAtom { reward: verify(q, &y, mode)?, score, prob: w });
            }
            (pts, min_per_bin)
        }
    };

    let dist = EmpiricalDistribution::from_weighted(points.iter().map(|a| (a.reward, a.prob)))?;
    let mut mids = Vec::with_capacity(dist.len());
    let mut below = 0.0;
    for &p in dist.probs() {
        mids.push(below + p / 2.0);
        below += p;
    }
    let level = |r: f64| {
        let k = dist.values().partition_point(|&v| v < r);
        mids[k]
    };

    let mut mass = vec![0.0; bins];
    let mut score_sum = vec![0.0; bins];
    let mut reward_sum = vec![0.0; bins];
    let mut counts = vec![0usize; bins];
    for a in points.iter().filter(|a| a.prob > 0.0) {
        let k = ((level(a.reward) * bins as f64) as usize).min(bins - 1);
        mass[k] += a.prob;
        score_sum[k] += a.prob * a.score;
        reward_sum[k] += a.prob * a.reward;
        counts[k] += 1;
    }
    if min_per_bin > 0 {
        if let Some(k) = counts.iter().position(|&c| c > 0 && c < min_per_bin) {
            return Err(Error::InsufficientSamples(format!(
                "bin {k} holds {} samples, fewer than {min_per_bin}",
                counts[k]
            )));
        }
    }
    let psi: Vec<Option<f64>> = (0..bins).map(|k| (mass[k] > 0.0).then(|| score_sum[k] / mass[k])).collect();
    let mean_reward = (0..bins).map(|k| (mass[k] > 0.0).then(|| reward_sum[k] / mass[k])).collect();
    let edges: Vec<f64> = (0..=bins).map(|k| k as f64 / bins as f64).collect();

    let region = |keep: &dyn Fn(usize) -> bool| -> Vec<f64> { (0..bins).filter(|&k| keep(k)).filter_map(|k| psi[k]).collect() };
    let lower = region(&|k| edges[k + 1] <= cfg.alpha + SLACK);
    let upper = region(&|k| edges[k] >= cfg.beta - SLACK);
    Ok(PsiProfile {
        lower_nonincreasing: lower.windows(2).all(|w| w[1] <= w[0] + SLACK),
        upper_nondecreasing: upper.windows(2).all(|w| w[1] >= w[0] - SLACK),
        edges,
        psi,
        mean_reward,
        counts,
        mass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{generate_bank, AnswerSpace, BankSpec};
    use crate::policy::PolicyKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bank() -> QuestionBank {
        let spec = BankSpec { num_questions: 12, space: AnswerSpace::Bandit { answers: 16 }, ..BankSpec::hard_mix() };
        generate_bank(&spec, &mut ChaCha8Rng::seed_from_u64(4)).unwrap()
    }

    #[test]
    fn uniform_policy_is_flat() {
        let bank = bank();
        let policy = bank.uniform_policy().unwrap();
        let p = psi_profile::<ChaCha8Rng>(&policy, &bank, RewardMode::Fractional, PsiSource::Enumerate { cap: 64 }, 10, &RiskConfig::default())
            .unwrap();
        let vals: Vec<f64> = p.psi.iter().flatten().copied().collect();
        assert!(!vals.is_empty());
        assert!(vals.iter().all(|v| (v - (1.0f64 / 16.0).ln()).abs() < 1e-12));
        assert!(p.lower_nonincreasing && p.upper_nondecreasing);
        assert!((p.mass.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_answers_rise_in_upper_tail() {
        let bank = bank();
        let mut logits = vec![0.0; 12 * 16];
        for q in &bank.questions {
            for y in &q.correct_set {
                logits[q.id * 16 + y.tokens()[0]] = 4.0;
            }
        }
        let policy = TabularPolicy::from_logits(PolicyKind::Bandit, 12, 1, 16, logits).unwrap();
        let p = psi_profile::<ChaCha8Rng>(&policy, &bank, RewardMode::Binary, PsiSource::Enumerate { cap: 64 }, 10, &RiskConfig::default())
            .unwrap();
        assert!(p.upper_nondecreasing);
    }

    #[test]
    fn sparse_samples_are_rejected() {
        let bank = bank();
        let policy = bank.uniform_policy().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let src = PsiSource::Samples { rng: &mut rng, samples: 10, min_per_bin: 30 };
        let err = psi_profile(&policy, &bank, RewardMode::Fractional, src, 20, &RiskConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InsufficientSamples(_)));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let src = PsiSource::Samples { rng: &mut rng, samples: 20_000, min_per_bin: 30 };
        let p = psi_profile(&policy, &bank, RewardMode::Binary, src, 10, &RiskConfig::default()).unwrap();
        assert_eq!(p.counts.iter().sum::<usize>(), 20_000);
    }
}
