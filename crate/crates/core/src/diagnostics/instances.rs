//! Small enumerable instances used by the checks.

use rand::Rng;

use crate::envs::{AnswerSpace, Difficulty, QuestionBank, QuestionSpec, RewardMode};
use crate::error::{Error, Result};
use crate::policy::{PolicyKind, Response, TabularPolicy};
use crate::risk::RiskConfig;

use super::covariance::{joint_score_reward, tail_condition};

fn bandit_question(id: usize, credit: Vec<f64>) -> QuestionSpec {
    let space = AnswerSpace::Bandit { answers: credit.len() };
    QuestionSpec { id, space, correct_set: vec![Response::answer(0)], difficulty: Difficulty::Easy, credit: Some(credit) }
}

/// Bank of fractional-credit bandit questions sharing one answer count;
/// answer 0 is the correct one in each.
pub fn credit_bank(credits: Vec<Vec<f64>>) -> Result<QuestionBank> {
    let answers = credits.first().map(Vec::len).ok_or(Error::Empty("credit tables"))?;
    let questions = credits.into_iter().enumerate().map(|(id, c)| bandit_question(id, c)).collect();
    QuestionBank::new(AnswerSpace::Bandit { answers }, questions, [1.0, 0.0, 0.0])
}

/// Two questions with three answers each and fractional credit. With one
/// question per bundle the reward CDF sits well away from 0.2 and 0.8.
pub fn canonical_gradient_instance() -> Result<(QuestionBank, TabularPolicy)> {
    let bank = credit_bank(vec![vec![1.0, 0.3, 0.1], vec![1.0, 0.6, 0.45]])?;
    let logits = vec![0.2, -0.4, 0.5, -0.3, 0.1, 0.6];
    let policy = TabularPolicy::from_logits(PolicyKind::Bandit, 2, 1, 3, logits)?;
    Ok((bank, policy))
}

/// Random credits and logits; rewards are distinct within each question.
pub fn random_credit_instance<R: Rng + ?Sized>(
    rng: &mut R,
    questions: usize,
    answers: usize,
    logit_scale: f64,
) -> Result<(QuestionBank, TabularPolicy)> {
    if answers < 2 {
        return Err(Error::InvalidConfig { field: "answers".into(), reason: "need at least 2".into() });
    }
    let credits = (0..questions)
        .map(|_| {
            let mut c = vec![1.0];
            c.extend((1..answers).map(|_| rng.random::<f64>() * 0.95));
            c
        })
        .collect();
    let bank = credit_bank(credits)?;
    let logits = (0..questions * answers).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * logit_scale).collect();
    let policy = TabularPolicy::from_logits(PolicyKind::Bandit, questions, 1, answers, logits)?;
    Ok((bank, policy))
}

/// One question whose log-probabilities are U-shaped in the reward, so mass
/// and confidence concentrate on both tails.
pub fn u_shaped_instance<R: Rng + ?Sized>(rng: &mut R, answers: usize) -> Result<(QuestionBank, TabularPolicy)> {
    let (bank, _) = random_credit_instance(rng, 1, answers, 0.0)?;
    let credit = bank.questions[0].credit.clone().expect("credit bank");
    let curvature = 2.0 + 6.0 * rng.random::<f64>();
    let center = 0.3 + 0.4 * rng.random::<f64>();
    let logits = credit
        .iter()
        .map(|r| curvature * (r - center).powi(2) + 0.3 * (rng.random::<f64>() * 2.0 - 1.0))
        .collect();
    let policy = TabularPolicy::from_logits(PolicyKind::Bandit, 1, 1, answers, logits)?;
    Ok((bank, policy))
}

/// Draws U-shaped instances until one satisfies the two-tail condition.
/// Returns the instance and the number of draws it took.
pub fn sample_tail_instance<R: Rng + ?Sized>(
    rng: &mut R,
    answers: usize,
    cfg: &RiskConfig,
    max_tries: usize,
) -> Result<(QuestionBank, TabularPolicy, usize)> {
    for attempt in 1..=max_tries {
        let (bank, policy) = u_shaped_instance(rng, answers)?;
        let joint = joint_score_reward(&policy, &bank, RewardMode::Fractional, 1 << 16)?;
        if tail_condition(&joint, cfg)?.holds() {
            return Ok((bank, policy, attempt));
        }
    }
    Err(Error::PreconditionUnmet(format!("no instance met the tail condition in {max_tries} draws")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn canonical_instance_is_valid() {
        let (bank, policy) = canonical_gradient_instance().unwrap();
        bank.check_policy(&policy).unwrap();
        assert_eq!(bank.question_probs(), vec![0.5, 0.5]);
    }

    #[test]
    fn tail_sampler_finds_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (_, _, tries) = sample_tail_instance(&mut rng, 8, &RiskConfig::default(), 1000).unwrap();
        assert!(tries >= 1);
    }
}
