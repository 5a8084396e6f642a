//! Tabular softmax policies.
//!
//! A bandit policy holds one logit row per question; a response is a single
//! answer. A chain policy holds one logit row per (question, position) and
//! emits a fixed-length token sequence whose per-position distribution does
//! not depend on the prefix.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LOGIT_BOUND: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Bandit,
    Chain,
}

impl PolicyKind {
    fn name(self) -> &'static str {
        match self {
            PolicyKind::Bandit => "bandit",
            PolicyKind::Chain => "chain",
        }
    }
}

/// A response: one answer id (bandit) or `horizon` token ids (chain).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Response(pub Vec<usize>);

impl Response {
    pub fn answer(a: usize) -> Self {
        Response(vec![a])
    }

    pub fn tokens(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Raw and length-normalized sequence log-probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeqLogProb {
    pub raw: f64,
    pub normalized: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyEstimate {
    pub nats: f64,
    /// Zero for exact enumeration.
    pub std_error: f64,
    pub exact: bool,
}

/// Softmax policy over a finite answer space, logits stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    kind: PolicyKind,
    num_questions: usize,
    horizon: usize,
    vocab_size: usize,
    logit_bound: f64,
    logits: Vec<f64>,
}

impl TabularPolicy {
    /// Uniform bandit policy over `num_answers` answers per question.
    pub fn bandit(num_questions: usize, num_answers: usize) -> Result<Self> {
        Self::from_logits(
            PolicyKind::Bandit,
            num_questions,
            1,
            num_answers,
            vec![0.0; num_questions * num_answers],
        )
    }

    /// Uniform chain policy emitting `horizon` tokens from `vocab_size`.
    pub fn chain(num_questions: usize, horizon: usize, vocab_size: usize) -> Result<Self> {
        Self::from_logits(
            PolicyKind::Chain,
            num_questions,
            horizon,
            vocab_size,
            vec![0.0; num_questions * horizon * vocab_size],
        )
    }

    pub fn from_logits(
        kind: PolicyKind,
        num_questions: usize,
        horizon: usize,
        vocab_size: usize,
        logits: Vec<f64>,
    ) -> Result<Self> {
        let policy = Self {
            kind,
            num_questions,
            horizon,
            vocab_size,
            logit_bound: DEFAULT_LOGIT_BOUND,
            logits,
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn with_logit_bound(mut self, bound: f64) -> Result<Self> {
        if !(bound > 0.0 && bound.is_finite()) {
            return Err(Error::InvalidPolicy(format!("logit bound must be positive, got {bound}")));
        }
        self.logit_bound = bound;
        self.clamp();
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if self.num_questions == 0 {
            return Err(Error::InvalidPolicy("no questions".into()));
        }
        match self.kind {
            PolicyKind::Bandit if self.horizon != 1 => {
                return Err(Error::InvalidPolicy("bandit horizon must be 1".into()))
            }
            PolicyKind::Bandit if self.vocab_size < 1 => {
                return Err(Error::InvalidPolicy("bandit needs at least one answer".into()))
            }
            PolicyKind::Chain if self.horizon < 1 || self.vocab_size < 2 => {
                return Err(Error::InvalidPolicy("chain needs horizon >= 1 and vocab >= 2".into()))
            }
            _ => {}
        }
        let expected = self.num_questions * self.horizon * self.vocab_size;
        if self.logits.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "expected {expected} logits, got {}",
                self.logits.len()
            )));
        }
        if self.logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidPolicy("non-finite logit".into()));
        }
        if !(self.logit_bound > 0.0 && self.logit_bound.is_finite()) {
            return Err(Error::InvalidPolicy("logit bound must be positive".into()));
        }
        Ok(())
    }

    fn clamp(&mut self) {
        let b = self.logit_bound;
        for z in &mut self.logits {
            *z = z.clamp(-b, b);
        }
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn num_questions(&self) -> usize {
        self.num_questions
    }

    /// Tokens per response (1 for bandits).
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Choices per position (answers for bandits).
    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn logit_bound(&self) -> f64 {
        self.logit_bound
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    /// Number of distinct responses, `vocab_size^horizon`.
    pub fn answer_space_size(&self) -> u128 {
        (self.vocab_size as u128).saturating_pow(self.horizon as u32)
    }

    /// Flat offset of the logit row for `(question, position)`.
    pub fn row_offset(&self, question: usize, position: usize) -> usize {
        (question * self.horizon + position) * self.vocab_size
    }

    pub fn row(&self, question: usize, position: usize) -> &[f64] {
        let o = self.row_offset(question, position);
        &self.logits[o..o + self.vocab_size]
    }

    fn check_question(&self, question: usize) -> Result<()> {
        if question >= self.num_questions {
            return Err(Error::UnknownQuestion { id: question, count: self.num_questions });
        }
        Ok(())
    }

    fn check_response(&self, response: &Response) -> Result<()> {
        if response.len() != self.horizon {
            return Err(Error::ResponseLength { got: response.len(), expected: self.horizon });
        }
        if let Some(&tok) = response.tokens().iter().find(|&&t| t >= self.vocab_size) {
            return Err(Error::TokenOutOfRange { token: tok, vocab: self.vocab_size });
        }
        Ok(())
    }

    /// Next-token distribution given the partial response `context`.
    pub fn action_probs(&self, question: usize, context: &[usize]) -> Result<Vec<f64>> {
        self.check_question(question)?;
        if context.len() >= self.horizon {
            return Err(Error::ContextLength {
                kind: self.kind.name(),
                got: context.len(),
                limit: self.horizon,
            });
        }
        Ok(softmax(self.row(question, context.len())))
    }

    pub fn sequence_log_prob(&self, question: usize, response: &Response) -> Result<SeqLogProb> {
        self.check_question(question)?;
        self.check_response(response)?;
        let raw: f64 = response
            .tokens()
            .iter()
            .enumerate()
            .map(|(t, &tok)| log_softmax_at(self.row(question, t), tok))
            .sum();
        Ok(SeqLogProb { raw, normalized: raw / response.len() as f64 })
    }

    /// Draws one response by inverse-CDF sampling, one uniform per position.
    pub fn sample_response<R: Rng + ?Sized>(&self, question: usize, rng: &mut R) -> Result<Response> {
        self.check_question(question)?;
        let tokens = (0..self.horizon)
            .map(|t| sample_index(&softmax(self.row(question, t)), rng.random::<f64>()))
            .collect();
        Ok(Response(tokens))
    }

    /// Every response with its probability. Fails when the space exceeds `cap`.
    pub fn enumerate_responses(&self, question: usize, cap: usize) -> Result<Vec<(Response, f64)>> {
        self.check_question(question)?;
        let size = self.answer_space_size();
        if size > cap as u128 {
            return Err(Error::CapExceeded { size, cap });
        }
        let rows: Vec<Vec<f64>> = (0..self.horizon).map(|t| softmax(self.row(question, t))).collect();
        let mut out = Vec::with_capacity(size as usize);
        let mut tokens = vec![0usize; self.horizon];
        loop {
            let p: f64 = tokens.iter().enumerate().map(|(t, &tok)| rows[t][tok]).product();
            out.push((Response(tokens.clone()), p));
            // Odometer increment, last position fastest.
            let mut t = self.horizon;
            loop {
                if t == 0 {
                    return Ok(out);
                }
                t -= 1;
                tokens[t] += 1;
                if tokens[t] < self.vocab_size {
                    break;
                }
                tokens[t] = 0;
            }
        }
    }

    /// Conditional entropy `H(π | x)` in nats.
    ///
    /// Exact when the answer space fits within `cap`; otherwise a Monte-Carlo
    /// estimate of `−E[log π(y|x)]` when `mc` supplies a generator and a
    /// sample count.
    pub fn entropy<R: Rng + ?Sized>(
        &self,
        question: usize,
        cap: usize,
        mc: Option<(&mut R, usize)>,
    ) -> Result<EntropyEstimate> {
        self.check_question(question)?;
        if self.answer_space_size() <= cap as u128 {
            let nats = self
                .enumerate_responses(question, cap)?
                .into_iter()
                .map(|(_, p)| if p > 0.0 { -p * p.ln() } else { 0.0 })
                .sum();
            return Ok(EntropyEstimate { nats, std_error: 0.0, exact: true });
        }
        let Some((rng, samples)) = mc else {
            return Err(Error::CapExceeded { size: self.answer_space_size(), cap });
        };
        if samples < 2 {
            return Err(Error::InsufficientSamples("Monte-Carlo entropy needs >= 2 samples".into()));
        }
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..samples {
            let y = self.sample_response(question, rng)?;
            let nll = -self.sequence_log_prob(question, &y)?.raw;
            sum += nll;
            sum_sq += nll * nll;
        }
        let n = samples as f64;
        let mean = sum / n;
        let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
        Ok(EntropyEstimate { nats: mean, std_error: (var / n).sqrt(), exact: false })
    }

    /// Natural-gradient step of a tabular softmax: `z[x, y] += η·A(x, y)`.
    ///
    /// `advantages` is aligned with the bandit logit table (question-major).
    pub fn natural_gradient_step(&self, advantages: &[f64], eta: f64) -> Result<Self> {
        if self.kind != PolicyKind::Bandit {
            return Err(Error::Unsupported("natural-gradient step is defined for bandit policies".into()));
        }
        if advantages.len() != self.logits.len() {
            return Err(Error::ShapeMismatch(format!(
                "advantage table has {} entries, policy has {}",
                advantages.len(),
                self.logits.len()
            )));
        }
        let mut next = self.clone();
        for (z, a) in next.logits.iter_mut().zip(advantages) {
            *z += eta * a;
        }
        next.validate()?;
        next.clamp();
        Ok(next)
    }

    /// `logits += eta · direction`, then clamp to the logit bound.
    pub fn ascend(&mut self, direction: &[f64], eta: f64) -> Result<()> {
        if direction.len() != self.logits.len() {
            return Err(Error::ShapeMismatch(format!(
                "direction has {} entries, policy has {}",
                direction.len(),
                self.logits.len()
            )));
        }
        for (z, d) in self.logits.iter_mut().zip(direction) {
            *z += eta * d;
        }
        self.validate()?;
        self.clamp();
        Ok(())
    }

    /// Accumulates `scale · ∇_z log π(y|x)` (raw, unnormalized) into `grad`.
    pub fn add_score_gradient(
        &self,
        question: usize,
        response: &Response,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        self.check_question(question)?;
        self.check_response(response)?;
        for (t, &tok) in response.tokens().iter().enumerate() {
            self.add_token_score_gradient(question, t, tok, scale, grad);
        }
        Ok(())
    }

    /// Accumulates `scale · ∇_z log π̃(y_t | y_<t, x)` into `grad`.
    pub(crate) fn add_token_score_gradient(
        &self,
        question: usize,
        position: usize,
        token: usize,
        scale: f64,
        grad: &mut [f64],
    ) {
        let o = self.row_offset(question, position);
        let probs = softmax(self.row(question, position));
        for (k, p) in probs.iter().enumerate() {
            grad[o + k] -= scale * p;
        }
        grad[o + token] += scale;
    }

    pub(crate) fn token_log_prob(&self, question: usize, position: usize, token: usize) -> f64 {
        log_softmax_at(self.row(question, position), token)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let policy: Self = serde_json::from_str(text)?;
        policy.validate()?;
        Ok(policy)
    }

    pub(crate) fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }
}

/// Softmax with max-logit subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

fn log_softmax_at(logits: &[f64], k: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits[k] - m - lse
}

fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // u landed in the rounding slack above the final partial sum.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}
