//! Synthetic verifiable-reward tasks: question banks, the rule-based
//! verifier, rollout collection and bundle construction.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{PolicyKind, Response, SeqLogProb, TabularPolicy};
use crate::risk::{mvar_advantage, risk_seeking_advantage, QuantileTrackerState, RiskConfig};
use crate::streams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    #[default]
    Binary,
    Fractional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnswerSpace {
    Bandit { answers: usize },
    Chain { vocab: usize, horizon: usize },
}

impl AnswerSpace {
    pub fn size(&self) -> u128 {
        match *self {
            AnswerSpace::Bandit { answers } => answers as u128,
            AnswerSpace::Chain { vocab, horizon } => (vocab as u128).saturating_pow(horizon as u32),
        }
    }

    pub fn horizon(&self) -> usize {
        match *self {
            AnswerSpace::Bandit { .. } => 1,
            AnswerSpace::Chain { horizon, .. } => horizon,
        }
    }

    pub fn vocab(&self) -> usize {
        match *self {
            AnswerSpace::Bandit { answers } => answers,
            AnswerSpace::Chain { vocab, .. } => vocab,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            AnswerSpace::Bandit { answers } if answers < 2 => {
                Err(Error::InvalidBank("bandit answer space needs >= 2 answers".into()))
            }
            AnswerSpace::Chain { vocab, horizon } if vocab < 2 || horizon < 1 => {
                Err(Error::InvalidBank("chain answer space needs vocab >= 2, horizon >= 1".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn contains(&self, response: &Response) -> bool {
        response.len() == self.horizon() && response.tokens().iter().all(|&t| t < self.vocab())
    }

    /// Uniform policy over this space for `num_questions` questions.
    pub fn uniform_policy(&self, num_questions: usize) -> Result<TabularPolicy> {
        match *self {
            AnswerSpace::Bandit { answers } => TabularPolicy::bandit(num_questions, answers),
            AnswerSpace::Chain { vocab, horizon } => TabularPolicy::chain(num_questions, horizon, vocab),
        }
    }

    fn matches(&self, policy: &TabularPolicy) -> bool {
        let kind = match self {
            AnswerSpace::Bandit { .. } => PolicyKind::Bandit,
            AnswerSpace::Chain { .. } => PolicyKind::Chain,
        };
        policy.kind() == kind && policy.vocab_size() == self.vocab() && policy.horizon() == self.horizon()
    }

    fn decode(&self, mut index: u128) -> Response {
        let v = self.vocab() as u128;
        let mut tokens = vec![0usize; self.horizon()];
        for t in (0..self.horizon()).rev() {
            tokens[t] = (index % v) as usize;
            index /= v;
        }
        Response(tokens)
    }
}

/// One synthetic question with its verifier data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionSpec {
    pub id: usize,
    pub space: AnswerSpace,
    /// Sorted; the first member is the reference for fractional chain credit.
    pub correct_set: Vec<Response>,
    pub difficulty: Difficulty,
    /// Per-answer credit for fractional bandit rewards (1 on correct answers).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credit: Option<Vec<f64>>,
}

impl QuestionSpec {
    pub fn validate(&self) -> Result<()> {
        self.space.validate()?;
        if self.correct_set.is_empty() {
            return Err(Error::InvalidBank(format!("question {} has an empty correct set", self.id)));
        }
        if let Some(bad) = self.correct_set.iter().find(|r| !self.space.contains(r)) {
            return Err(Error::InvalidBank(format!(
                "question {} correct response {:?} outside the answer space",
                self.id,
                bad.tokens()
            )));
        }
        if let Some(credit) = &self.credit {
            let AnswerSpace::Bandit { answers } = self.space else {
                return Err(Error::InvalidBank("credit tables apply to bandit questions".into()));
            };
            if credit.len() != answers || credit.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::InvalidBank(format!("question {} has an invalid credit table", self.id)));
            }
            if self.correct_set.iter().any(|r| credit[r.tokens()[0]] != 1.0) {
                return Err(Error::InvalidBank(format!("question {} credits a correct answer below 1", self.id)));
            }
        }
        Ok(())
    }

    pub fn is_correct(&self, response: &Response) -> bool {
        self.correct_set.binary_search(response).is_ok()
    }

    pub fn reference(&self) -> &Response {
        &self.correct_set[0]
    }
}

/// Rule-based verifier.
///
/// Binary: 1 iff the response is in the correct set. Fractional: for chains,
/// the fraction of positions matching the reference; for bandits, the
/// question's credit table (falls back to binary without one).
pub fn verify(question: &QuestionSpec, response: &Response, mode: RewardMode) -> Result<f64> {
    if !question.space.contains(response) {
        return Err(Error::ShapeMismatch(format!(
            "response {:?} outside the answer space of question {}",
            response.tokens(),
            question.id
        )));
    }
    let binary = if question.is_correct(response) { 1.0 } else { 0.0 };
    Ok(match (mode, question.space) {
        (RewardMode::Binary, _) => binary,
        (RewardMode::Fractional, AnswerSpace::Chain { horizon, .. }) => {
            let matches = response
                .tokens()
                .iter()
                .zip(question.reference().tokens())
                .filter(|(a, b)| a == b)
                .count();
            matches as f64 / horizon as f64
        }
        (RewardMode::Fractional, AnswerSpace::Bandit { .. }) => match &question.credit {
            Some(credit) => credit[response.tokens()[0]],
            None => binary,
        },
    })
}

/// Recipe for a synthetic bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankSpec {
    pub num_questions: usize,
    /// Sampling weights of (easy, medium, hard).
    pub mixture: [f64; 3],
    pub space: AnswerSpace,
    /// Correct-set size as a fraction of the answer space, per difficulty.
    #[serde(default = "default_correct_fraction")]
    pub correct_fraction: [f64; 3],
    /// Upper bound of random partial credit on wrong bandit answers.
    #[serde(default = "default_partial_credit")]
    pub partial_credit_max: f64,
}

fn default_correct_fraction() -> [f64; 3] {
    [1.0 / 4.0, 1.0 / 16.0, 1.0 / 64.0]
}

fn default_partial_credit() -> f64 {
    0.5
}

impl BankSpec {
    /// 64-answer bandit bank weighted toward hard questions.
    pub fn hard_mix() -> Self {
        Self {
            num_questions: 40,
            mixture: [0.2, 0.3, 0.5],
            space: AnswerSpace::Bandit { answers: 64 },
            correct_fraction: default_correct_fraction(),
            partial_credit_max: default_partial_credit(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_questions == 0 {
            return Err(Error::InvalidBank("num_questions must be >= 1".into()));
        }
        self.space.validate()?;
        check_mixture(&self.mixture)?;
        if self.correct_fraction.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::InvalidBank("correct fractions must lie in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.partial_credit_max) {
            return Err(Error::InvalidBank("partial_credit_max must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

impl Default for BankSpec {
    fn default() -> Self {
        Self::hard_mix()
    }
}

fn check_mixture(w: &[f64; 3]) -> Result<()> {
    if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::InvalidMixture(format!("weights must be non-negative, got {w:?}")));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidMixture(format!("weights {w:?} sum to {s}, not 1")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionBank {
    pub space: AnswerSpace,
    pub questions: Vec<QuestionSpec>,
    pub mixture_weights: [f64; 3],
}

impl QuestionBank {
    pub fn new(space: AnswerSpace, questions: Vec<QuestionSpec>, mixture_weights: [f64; 3]) -> Result<Self> {
        let bank = Self { space, questions, mixture_weights };
        bank.validate()?;
        Ok(bank)
    }

    pub fn validate(&self) -> Result<()> {
        self.space.validate()?;
        check_mixture(&self.mixture_weights)?;
        if self.questions.is_empty() {
            return Err(Error::InvalidBank("empty bank".into()));
        }
        for (k, q) in self.questions.iter().enumerate() {
            if q.id != k {
                return Err(Error::InvalidBank(format!("question at index {k} has id {}", q.id)));
            }
            if q.space != self.space {
                return Err(Error::InvalidBank(format!("question {k} uses a different answer space")));
            }
            q.validate()?;
        }
        let present: f64 = Difficulty::ALL
            .iter()
            .filter(|d| self.questions.iter().any(|q| q.difficulty == **d))
            .map(|d| self.mixture_weights[d.index()])
            .sum();
        if present <= 0.0 {
            return Err(Error::InvalidMixture("no weight on any difficulty present in the bank".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    /// Per-question sampling probability: difficulty weight shared uniformly
    /// among that difficulty's questions, renormalized over the difficulties
    /// present.
    pub fn question_probs(&self) -> Vec<f64> {
        let mut counts = [0usize; 3];
        for q in &self.questions {
            counts[q.difficulty.index()] += 1;
        }
        let present: f64 = (0..3).filter(|&d| counts[d] > 0).map(|d| self.mixture_weights[d]).sum();
        self.questions
            .iter()
            .map(|q| {
                let d = q.difficulty.index();
                self.mixture_weights[d] / counts[d] as f64 / present
            })
            .collect()
    }

    /// Uniform policy shaped for this bank.
    pub fn uniform_policy(&self) -> Result<TabularPolicy> {
        self.space.uniform_policy(self.len())
    }

    pub fn check_policy(&self, policy: &TabularPolicy) -> Result<()> {
        if !self.space.matches(policy) || policy.num_questions() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "policy ({:?}, {} questions, horizon {}, vocab {}) does not match bank ({:?}, {} questions)",
                policy.kind(),
                policy.num_questions(),
                policy.horizon(),
                policy.vocab_size(),
                self.space,
                self.len()
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let bank: Self = serde_json::from_str(text)?;
        bank.validate()?;
        Ok(bank)
    }
}

/// Generates a bank; difficulty is realized through the size of each
/// question's correct set relative to the answer space.
pub fn generate_bank<R: Rng + ?Sized>(spec: &BankSpec, rng: &mut R) -> Result<QuestionBank> {
    spec.validate()?;
    let size = spec.space.size();
    let mut questions = Vec::with_capacity(spec.num_questions);
    for id in 0..spec.num_questions {
        let difficulty = Difficulty::ALL[sample_categorical(&spec.mixture, rng.random())];
        let want = ((size as f64) * spec.correct_fraction[difficulty.index()]).round().max(1.0);
        let k = (want as u128).min(size) as usize;
        let mut correct_set: Vec<Response> = if size <= usize::MAX as u128 {
            index::sample(rng, size as usize, k).into_iter().map(|i| spec.space.decode(i as u128)).collect()
        } else {
            return Err(Error::InvalidBank("answer space too large to index".into()));
        };
        correct_set.sort();
        correct_set.dedup();
        let credit = match spec.space {
            AnswerSpace::Bandit { answers } => {
                let mut c: Vec<f64> =
                    (0..answers).map(|_| rng.random::<f64>() * spec.partial_credit_max).collect();
                for r in &correct_set {
                    c[r.tokens()[0]] = 1.0;
                }
                Some(c)
            }
            AnswerSpace::Chain { .. } => None,
        };
        questions.push(QuestionSpec { id, space: spec.space, correct_set, difficulty, credit });
    }
    QuestionBank::new(spec.space, questions, spec.mixture)
}

pub(crate) fn sample_categorical(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// `B × G` responses with rewards and collection-time log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub question_ids: Vec<usize>,
    pub responses: Vec<Vec<Response>>,
    pub rewards: Vec<Vec<f64>>,
    pub behavior_log_probs: Vec<Vec<SeqLogProb>>,
    /// Per-token log-probabilities under the collecting policy.
    pub behavior_token_log_probs: Vec<Vec<Vec<f64>>>,
}

impl RolloutBatch {
    pub fn bundle_size(&self) -> usize {
        self.question_ids.len()
    }

    pub fn group_size(&self) -> usize {
        self.responses.first().map_or(0, Vec::len)
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().flatten().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.bundle_size();
        let g = self.group_size();
        let rows_ok = |n: usize| n == b;
        if !rows_ok(self.responses.len())
            || !rows_ok(self.rewards.len())
            || !rows_ok(self.behavior_log_probs.len())
            || !rows_ok(self.behavior_token_log_probs.len())
        {
            return Err(Error::ShapeMismatch("rollout tables disagree on B".into()));
        }
        for i in 0..b {
            if self.responses[i].len() != g
                || self.rewards[i].len() != g
                || self.behavior_log_probs[i].len() != g
                || self.behavior_token_log_probs[i].len() != g
            {
                return Err(Error::ShapeMismatch(format!("row {i} does not have G = {g} entries")));
            }
            for j in 0..g {
                if self.behavior_token_log_probs[i][j].len() != self.responses[i][j].len() {
                    return Err(Error::ShapeMismatch(format!(
                        "missing behavior token log-probs at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Samples `b` questions from the bank's mixture and `g` responses for each.
///
/// Question draws use stream `(seed, QUESTIONS, iteration)`; the responses of
/// slot `i` use `(seed, RESPONSES, iteration, i)`.
pub fn collect_rollouts(
    policy: &TabularPolicy,
    bank: &QuestionBank,
    b: usize,
    g: usize,
    mode: RewardMode,
    seed: u64,
    iteration: u64,
) -> Result<RolloutBatch> {
    if b == 0 || g == 0 {
        return Err(Error::InvalidConfig {
            field: if b == 0 { "bundle_size" } else { "group_size" }.into(),
            reason: "must be >= 1".into(),
        });
    }
    if bank.is_empty() {
        return Err(Error::InvalidBank("empty bank".into()));
    }
    bank.check_policy(policy)?;
    let probs = bank.question_probs();
    let mut qrng = streams::stream(seed, &[streams::QUESTIONS, iteration]);
    let question_ids: Vec<usize> = (0..b).map(|_| sample_categorical(&probs, qrng.random())).collect();

    let mut batch = RolloutBatch {
        question_ids: question_ids.clone(),
        responses: Vec::with_capacity(b),
        rewards: Vec::with_capacity(b),
        behavior_log_probs: Vec::with_capacity(b),
        behavior_token_log_probs: Vec::with_capacity(b),
    };
    for (slot, &q) in question_ids.iter().enumerate() {
        let mut rng = streams::stream(seed, &[streams::RESPONSES, iteration, slot as u64]);
        let question = &bank.questions[q];
        let mut responses = Vec::with_capacity(g);
        let mut rewards = Vec::with_capacity(g);
        let mut lps = Vec::with_capacity(g);
        let mut tok_lps = Vec::with_capacity(g);
        for _ in 0..g {
            let y = policy.sample_response(q, &mut rng)?;
            rewards.push(verify(question, &y, mode)?);
            lps.push(policy.sequence_log_prob(q, &y)?);
            tok_lps.push(
                y.tokens().iter().enumerate().map(|(t, &tok)| policy.token_log_prob(q, t, tok)).collect(),
            );
            responses.push(y);
        }
        batch.responses.push(responses);
        batch.rewards.push(rewards);
        batch.behavior_log_probs.push(lps);
        batch.behavior_token_log_probs.push(tok_lps);
    }
    Ok(batch)
}

/// One permutation of `0..G` per question; bundle `j` takes response
/// `permutations[i][j]` from every question `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleAssignment {
    pub permutations: Vec<Vec<usize>>,
}

impl BundleAssignment {
    pub fn identity(b: usize, g: usize) -> Self {
        Self { permutations: vec![(0..g).collect(); b] }
    }

    pub fn validate(&self, b: usize, g: usize) -> Result<()> {
        if self.permutations.len() != b {
            return Err(Error::ShapeMismatch(format!(
                "assignment has {} rows, batch has B = {b}",
                self.permutations.len()
            )));
        }
        for (i, row) in self.permutations.iter().enumerate() {
            let mut seen = vec![false; g];
            if row.len() != g || !row.iter().all(|&k| k < g && !std::mem::replace(&mut seen[k], true)) {
                return Err(Error::ShapeMismatch(format!("row {i} is not a permutation of 0..{g}")));
            }
        }
        Ok(())
    }
}

/// Draws `b` independent uniform permutations of `0..g`.
pub fn assign_bundles<R: Rng + ?Sized>(b: usize, g: usize, rng: &mut R) -> Result<BundleAssignment> {
    if b == 0 || g == 0 {
        return Err(Error::InvalidConfig {
            field: if b == 0 { "bundle_size" } else { "group_size" }.into(),
            reason: "must be >= 1".into(),
        });
    }
    let permutations = (0..b)
        .map(|_| {
            let mut p: Vec<usize> = (0..g).collect();
            p.shuffle(rng);
            p
        })
        .collect();
    Ok(BundleAssignment { permutations })
}

/// `R_{B_j} = Σ_i R(y^i_{ξ_{i,j}})` for every bundle `j`.
pub fn compute_bundle_scores(batch: &RolloutBatch, assignment: &BundleAssignment) -> Result<Vec<f64>> {
    batch.validate()?;
    let (b, g) = (batch.bundle_size(), batch.group_size());
    assignment.validate(b, g)?;
    Ok((0..g)
        .map(|j| (0..b).map(|i| batch.rewards[i][assignment.permutations[i][j]]).sum())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BundleObjective {
    Mvar,
    RiskSeeking,
}

/// Advantages for each bundle score under the given objective.
///
/// Trackers that have crossed are used in sorted order.
pub fn bundle_advantages(
    scores: &[f64],
    trackers: &QuantileTrackerState,
    cfg: &RiskConfig,
    objective: BundleObjective,
) -> Result<Vec<f64>> {
    let lo = trackers.q_alpha.min(trackers.q_beta);
    let hi = trackers.q_alpha.max(trackers.q_beta);
    scores
        .iter()
        .map(|&s| match objective {
            BundleObjective::Mvar => mvar_advantage(s, lo, hi, cfg.omega),
            BundleObjective::RiskSeeking => risk_seeking_advantage(s, lo, hi, cfg.omega),
        })
        .collect()
}

/// Bundle scores and advantages of one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleSet {
    pub scores: Vec<f64>,
    pub advantages: Vec<f64>,
}

pub fn bundle_scores(
    batch: &RolloutBatch,
    assignment: &BundleAssignment,
    trackers: &QuantileTrackerState,
    cfg: &RiskConfig,
    objective: BundleObjective,
) -> Result<BundleSet> {
    let scores = compute_bundle_scores(batch, assignment)?;
    let advantages = bundle_advantages(&scores, trackers, cfg, objective)?;
    Ok(BundleSet { scores, advantages })
}

/// Exact `E[R | x]` under the policy.
pub fn expected_reward(
    policy: &TabularPolicy,
    question: &QuestionSpec,
    mode: RewardMode,
) -> Result<f64> {
    let q = question.id;
    match (mode, question.space) {
        (RewardMode::Binary, _) => question
            .correct_set
            .iter()
            .map(|y| policy.sequence_log_prob(q, y).map(|lp| lp.raw.exp()))
            .sum(),
        (RewardMode::Fractional, AnswerSpace::Chain { horizon, .. }) => {
            let reference = question.reference().tokens();
            let mut total = 0.0;
            for (t, &tok) in reference.iter().enumerate() {
                total += policy.action_probs(q, &reference[..t])?[tok];
            }
            Ok(total / horizon as f64)
        }
        (RewardMode::Fractional, AnswerSpace::Bandit { answers }) => {
            let probs = policy.action_probs(q, &[])?;
            (0..answers)
                .map(|a| verify(question, &Response::answer(a), mode).map(|r| r * probs[a]))
                .sum()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(weights: [f64; 3]) -> BankSpec {
        BankSpec { num_questions: 30, mixture: weights, ..BankSpec::hard_mix() }
    }

    fn two_question_bank() -> QuestionBank {
        let space = AnswerSpace::Bandit { answers: 2 };
        let qs = (0..2)
            .map(|id| QuestionSpec {
                id,
                space,
                correct_set: vec![Response::answer(0)],
                difficulty: Difficulty::Easy,
                credit: None,
            })
            .collect();
        QuestionBank::new(space, qs, [1.0, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn bank_generation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bank = generate_bank(&spec([1.0, 0.0, 0.0]), &mut rng).unwrap();
        assert_eq!(bank.len(), 30);
        assert!(bank.questions.iter().all(|q| q.difficulty == Difficulty::Easy && q.correct_set.len() == 16));

        let a = generate_bank(&spec([0.2, 0.3, 0.5]), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = generate_bank(&spec([0.2, 0.3, 0.5]), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        let hard = a.questions.iter().find(|q| q.difficulty == Difficulty::Hard).unwrap();
        assert_eq!(hard.correct_set.len(), 1);

        assert!(matches!(
            generate_bank(&spec([0.5, 0.6, 0.2]), &mut rng),
            Err(Error::InvalidMixture(_))
        ));
    }

    #[test]
    fn chain_bank_generation() {
        let s = BankSpec {
            num_questions: 5,
            mixture: [0.0, 1.0, 0.0],
            space: AnswerSpace::Chain { vocab: 4, horizon: 3 },
            ..BankSpec::hard_mix()
        };
        let bank = generate_bank(&s, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for q in &bank.questions {
            assert_eq!(q.correct_set.len(), 4);
            assert!(q.credit.is_none());
        }
        let round = QuestionBank::from_json(&bank.to_json().unwrap()).unwrap();
        assert_eq!(round, bank);
    }

    #[test]
    fn verify_examples() {
        let bank = two_question_bank();
        let q = &bank.questions[0];
        assert_eq!(verify(q, &Response::answer(0), RewardMode::Binary).unwrap(), 1.0);
        assert_eq!(verify(q, &Response::answer(1), RewardMode::Binary).unwrap(), 0.0);
        assert!(verify(q, &Response::answer(2), RewardMode::Binary).is_err());

        let space = AnswerSpace::Chain { vocab: 3, horizon: 4 };
        let chain_q = QuestionSpec {
            id: 0,
            space,
            correct_set: vec![Response(vec![0, 1, 2, 0])],
            difficulty: Difficulty::Hard,
            credit: None,
        };
        let r = verify(&chain_q, &Response(vec![0, 1, 0, 1]), RewardMode::Fractional).unwrap();
        assert_eq!(r, 0.5);
        assert_eq!(verify(&chain_q, &Response(vec![0, 1, 0, 1]), RewardMode::Binary).unwrap(), 0.0);
    }

    #[test]
    fn rollout_shapes_and_determinism() {
        let bank = generate_bank(&BankSpec::hard_mix(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let policy = bank.uniform_policy().unwrap();
        let batch = collect_rollouts(&policy, &bank, 5, 10, RewardMode::Binary, 11, 1).unwrap();
        assert_eq!(batch.question_ids.len(), 5);
        assert!(batch.rewards.iter().all(|row| row.len() == 10));
        assert_eq!(batch.responses.iter().map(Vec::len).sum::<usize>(), 50);
        for (i, &q) in batch.question_ids.iter().enumerate() {
            for (y, lp) in batch.responses[i].iter().zip(&batch.behavior_log_probs[i]) {
                assert_eq!(*lp, policy.sequence_log_prob(q, y).unwrap());
            }
        }
        let again = collect_rollouts(&policy, &bank, 5, 10, RewardMode::Binary, 11, 1).unwrap();
        assert_eq!(batch, again);
        assert!(collect_rollouts(&policy, &bank, 0, 10, RewardMode::Binary, 11, 1).is_err());
    }

    #[test]
    fn deterministic_policy_on_easy_bank_always_correct() {
        let bank = two_question_bank();
        let policy = TabularPolicy::from_logits(PolicyKind::Bandit, 2, 1, 2, vec![30.0, -30.0, 30.0, -30.0]).unwrap();
        let batch = collect_rollouts(&policy, &bank, 3, 8, RewardMode::Binary, 5, 0).unwrap();
        assert!(batch.rewards.iter().flatten().all(|&r| r == 1.0));
    }

    #[test]
    fn bundle_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = assign_bundles(2, 3, &mut rng).unwrap();
        a.validate(2, 3).unwrap();
        let single = assign_bundles(4, 1, &mut rng).unwrap();
        assert_eq!(single.permutations, vec![vec![0]; 4]);

        let batch = RolloutBatch {
            question_ids: vec![0, 1],
            responses: vec![vec![Response::answer(0), Response::answer(1)]; 2],
            rewards: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            behavior_log_probs: vec![vec![SeqLogProb { raw: 0.5f64.ln(), normalized: 0.5f64.ln() }; 2]; 2],
            behavior_token_log_probs: vec![vec![vec![0.5f64.ln()]; 2]; 2],
        };
        let ident = BundleAssignment::identity(2, 2);
        assert_eq!(compute_bundle_scores(&batch, &ident).unwrap(), vec![1.0, 1.0]);

        let cfg = RiskConfig::default();
        let trackers = QuantileTrackerState::new(1.0, 3.0);
        let adv = bundle_advantages(&[0.0, 2.0, 4.0], &trackers, &RiskConfig { omega: 0.5, ..cfg }, BundleObjective::Mvar).unwrap();
        assert_eq!(adv, vec![-3.5, -1.0, 0.0]);

        let bad = BundleAssignment { permutations: vec![vec![0, 0], vec![0, 1]] };
        assert!(compute_bundle_scores(&batch, &bad).is_err());
    }

    #[test]
    fn permutations_are_uniform() {
        // 10^5 independent seeds at G = 3: each of the 6 orders near 1/6.
        let n = 100_000u64;
        let mut counts = std::collections::HashMap::new();
        for seed in 0..n {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = assign_bundles(1, 3, &mut rng).unwrap();
            *counts.entry(a.permutations[0].clone()).or_insert(0u64) += 1;
        }
        assert_eq!(counts.len(), 6);
        for c in counts.values() {
            assert!((*c as f64 / n as f64 - 1.0 / 6.0).abs() < 0.01);
        }
    }

    #[test]
    fn expected_reward_matches_enumeration() {
        let s = BankSpec {
            num_questions: 3,
            mixture: [0.4, 0.3, 0.3],
            space: AnswerSpace::Chain { vocab: 3, horizon: 3 },
            ..BankSpec::hard_mix()
        };
        let bank = generate_bank(&s, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let logits: Vec<f64> = (0..27).map(|k| ((k * 7 % 11) as f64) * 0.2 - 1.0).collect();
        let policy = TabularPolicy::from_logits(PolicyKind::Chain, 3, 3, 3, logits).unwrap();
        for q in &bank.questions {
            for mode in [RewardMode::Binary, RewardMode::Fractional] {
                let brute: f64 = policy
                    .enumerate_responses(q.id, 100)
                    .unwrap()
                    .into_iter()
                    .map(|(y, p)| p * verify(q, &y, mode).unwrap())
                    .sum();
                assert!((expected_reward(&policy, q, mode).unwrap() - brute).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn question_probs_follow_mixture() {
        let bank = generate_bank(&BankSpec::hard_mix(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let probs = bank.question_probs();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
