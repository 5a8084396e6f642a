//! Optimization loops: the risk-based bundle method with quantile tracking
//! and the group-standardized baseline.

use serde::{Deserialize, Serialize};

use crate::diagnostics::metrics::pass_at_k;
use crate::envs::{
    assign_bundles, bundle_advantages, collect_rollouts, compute_bundle_scores, expected_reward, verify,
    BundleAssignment, BundleObjective, BundleSet, QuestionBank, RewardMode, RolloutBatch,
};
use crate::error::{Error, Result};
use crate::policy::TabularPolicy;
use crate::risk::{exact_mvar, exact_rvar, grpo_advantages, mean_advantages, EmpiricalDistribution, QuantileTrackerState, RiskConfig};
use crate::streams;

/// Pass@k budgets recorded at each evaluation.
pub const EVAL_KS: [usize; 3] = [1, 8, 16];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Riskpo,
    Grpo,
    RiskSeeking,
    Mean,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Riskpo => "riskpo",
            Objective::Grpo => "grpo",
            Objective::RiskSeeking => "risk_seeking",
            Objective::Mean => "mean",
        }
    }

    pub fn uses_trackers(self) -> bool {
        matches!(self, Objective::Riskpo | Objective::RiskSeeking)
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "riskpo" => Ok(Objective::Riskpo),
            "grpo" => Ok(Objective::Grpo),
            "risk_seeking" => Ok(Objective::RiskSeeking),
            "mean" => Ok(Objective::Mean),
            other => Err(Error::InvalidConfig {
                field: "objective".into(),
                reason: format!("unknown objective `{other}` (riskpo, grpo, risk_seeking, mean)"),
            }),
        }
    }
}

/// Training hyperparameters. Defaults follow the reference settings:
/// α=0.2, β=0.8, ω=0.5, B=5, G=10, ε=0.2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub objective: Objective,
    pub risk: RiskConfig,
    pub bundle_size: usize,
    pub group_size: usize,
    /// Clip radius of the importance ratio.
    pub epsilon: f64,
    pub iterations: usize,
    /// Minibatch updates per rollout batch; bundles are split into this many
    /// contiguous chunks.
    pub inner_epochs: usize,
    /// Constant policy step size η.
    pub learning_rate: f64,
    /// Tracker step size at k = 1; `None` means `0.1 · B`.
    pub gamma0: Option<f64>,
    /// Tracker schedule `γ_k = γ0 · k^(−decay)`.
    pub gamma_decay: f64,
    pub reward_mode: RewardMode,
    pub seed: u64,
    /// Evaluate every this many iterations (and always at 0 and K).
    pub eval_every: usize,
    /// Samples per question for Pass@k / Avg@k.
    pub eval_samples: usize,
    /// Largest answer space for exact entropy; larger spaces use Monte-Carlo.
    pub entropy_cap: usize,
    pub entropy_mc_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Riskpo,
            risk: RiskConfig::default(),
            bundle_size: 5,
            group_size: 10,
            epsilon: 0.2,
            iterations: 300,
            inner_epochs: 4,
            learning_rate: 1.0,
            gamma0: None,
            gamma_decay: 0.6,
            reward_mode: RewardMode::Binary,
            seed: 0,
            eval_every: 25,
            eval_samples: 32,
            entropy_cap: 4096,
            entropy_mc_samples: 10_000,
        }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::InvalidConfig { field: field.into(), reason: reason.into() }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.risk.validate().map_err(|e| invalid("risk", e.to_string()))?;
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(invalid("epsilon", "must be > 0"));
        }
        if self.iterations < 1 {
            return Err(invalid("iterations", "must be >= 1"));
        }
        if self.inner_epochs < 1 {
            return Err(invalid("inner_epochs", "must be >= 1"));
        }
        if self.bundle_size < 1 {
            return Err(invalid("bundle_size", "must be >= 1"));
        }
        let min_group = if self.objective.uses_trackers() { 1 } else { 2 };
        if self.group_size < min_group {
            return Err(invalid("group_size", format!("must be >= {min_group} for {}", self.objective.as_str())));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate", "must be > 0"));
        }
        if let Some(g) = self.gamma0 {
            if !(g > 0.0 && g.is_finite()) {
                return Err(invalid("gamma0", "must be > 0"));
            }
        }
        if !(self.gamma_decay > 0.0 && self.gamma_decay <= 1.0) {
            return Err(invalid("gamma_decay", "must lie in (0, 1]"));
        }
        let max_k = *EVAL_KS.iter().max().unwrap();
        if self.eval_samples < max_k {
            return Err(invalid("eval_samples", format!("must be >= {max_k}")));
        }
        if self.entropy_mc_samples < 2 {
            return Err(invalid("entropy_mc_samples", "must be >= 2"));
        }
        Ok(())
    }

    pub fn gamma(&self, k: u64) -> f64 {
        let g0 = self.gamma0.unwrap_or(0.1 * self.bundle_size as f64);
        g0 * (k.max(1) as f64).powf(-self.gamma_decay)
    }
}

/// Policy, reference snapshot, trackers and outer-iteration counter.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub policy: TabularPolicy,
    pub reference_policy: TabularPolicy,
    pub trackers: Option<QuantileTrackerState>,
    pub iteration: u64,
}

impl TrainerState {
    pub fn new(policy: TabularPolicy) -> Self {
        Self { reference_policy: policy.clone(), policy, trackers: None, iteration: 0 }
    }
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: u64,
    pub mean_reward: f64,
    pub entropy: f64,
    pub rvar_lower: f64,
    pub mvar: f64,
    /// Absent for objectives without trackers.
    pub q_alpha: Option<f64>,
    pub q_beta: Option<f64>,
    pub clip_fraction: f64,
    pub grad_norm: f64,
}

/// One row of `evals.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iteration: u64,
    pub pass_at_1: f64,
    pub pass_at_8: f64,
    pub pass_at_16: f64,
    pub avg_at_k: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub iterations: Vec<IterationLog>,
    pub evals: Vec<EvalRecord>,
    pub final_policy: TabularPolicy,
}

/// Surrogate value, its gradient over the logit table, and clip counts.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateEval {
    pub value: f64,
    pub grad: Vec<f64>,
    pub clipped_terms: usize,
    pub total_terms: usize,
}

/// PPO-style clipped term. Returns the value and, when the gradient flows,
/// the factor multiplying `∇ ratio`.
fn clipped_term(ratio: f64, adv: f64, eps: f64) -> (f64, bool) {
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
    if clipped < unclipped {
        (clipped, false)
    } else {
        (unclipped, true)
    }
}

/// Clipped bundle objective over all `G` bundles.
///
/// Value `G⁻¹ Σ_j B⁻¹ Σ_i min(s·A_j, clip(s, 1±ε)·A_j)` with the sequence
/// ratio `s = (π_θ/π_θ′)^(1/|y|)`, computed as `exp((raw_θ − raw_θ′)/|y|)`
/// against the behavior log-probabilities recorded in `batch`. Advantages and
/// quantiles are constants; clipped terms contribute no gradient.
pub fn clipped_bundle_objective(
    batch: &RolloutBatch,
    bundles: &BundleSet,
    assignment: &BundleAssignment,
    policy: &TabularPolicy,
    epsilon: f64,
) -> Result<SurrogateEval> {
    let all: Vec<usize> = (0..batch.group_size()).collect();
    clipped_bundle_objective_on(batch, bundles, assignment, policy, epsilon, &all)
}

fn clipped_bundle_objective_on(
    batch: &RolloutBatch,
    bundles: &BundleSet,
    assignment: &BundleAssignment,
    policy: &TabularPolicy,
    epsilon: f64,
    subset: &[usize],
) -> Result<SurrogateEval> {
    batch.validate()?;
    let (b, g) = (batch.bundle_size(), batch.group_size());
    assignment.validate(b, g)?;
    if bundles.advantages.len() != g {
        return Err(Error::ShapeMismatch(format!("{} advantages for {g} bundles", bundles.advantages.len())));
    }
    let norm = 1.0 / (subset.len() * b) as f64;
    let mut out = SurrogateEval { value: 0.0, grad: vec![0.0; policy.logits().len()], clipped_terms: 0, total_terms: 0 };
    for &j in subset {
        let adv = bundles.advantages[j];
        for i in 0..b {
            let k = assignment.permutations[i][j];
            let q = batch.question_ids[i];
            let y = &batch.responses[i][k];
            let len = y.len() as f64;
            let now = policy.sequence_log_prob(q, y)?.raw;
            let ratio = ((now - batch.behavior_log_probs[i][k].raw) / len).exp();
            let (value, flows) = clipped_term(ratio, adv, epsilon);
            out.value += norm * value;
            out.total_terms += 1;
            if !flows {
                out.clipped_terms += 1;
            } else if adv != 0.0 {
                // ∂s/∂θ = s · |y|⁻¹ · ∇ raw log π
                policy.add_score_gradient(q, y, norm * adv * ratio / len, &mut out.grad)?;
            }
        }
    }
    Ok(out)
}

/// Token-level clipped surrogate with per-question group advantages:
/// `B⁻¹ Σ_i G⁻¹ Σ_j |y|⁻¹ Σ_t min(w·Â, clip(w)·Â)`.
pub fn grpo_surrogate(
    batch: &RolloutBatch,
    advantages: &[Vec<f64>],
    policy: &TabularPolicy,
    epsilon: f64,
) -> Result<SurrogateEval> {
    let all: Vec<usize> = (0..batch.group_size()).collect();
    grpo_surrogate_on(batch, advantages, policy, epsilon, &all)
}

fn grpo_surrogate_on(
    batch: &RolloutBatch,
    advantages: &[Vec<f64>],
    policy: &TabularPolicy,
    epsilon: f64,
    subset: &[usize],
) -> Result<SurrogateEval> {
    batch.validate()?;
    let b = batch.bundle_size();
    if advantages.len() != b || advantages.iter().any(|row| row.len() != batch.group_size()) {
        return Err(Error::ShapeMismatch("group advantages do not match the batch".into()));
    }
    let norm = 1.0 / (subset.len() * b) as f64;
    let mut out = SurrogateEval { value: 0.0, grad: vec![0.0; policy.logits().len()], clipped_terms: 0, total_terms: 0 };
    for (i, row) in advantages.iter().enumerate() {
        let q = batch.question_ids[i];
        for &j in subset {
            let adv = row[j];
            let y = &batch.responses[i][j];
            let len = y.len() as f64;
            for (t, &tok) in y.tokens().iter().enumerate() {
                let now = policy.token_log_prob(q, t, tok);
                let ratio = (now - batch.behavior_token_log_probs[i][j][t]).exp();
                let (value, flows) = clipped_term(ratio, adv, epsilon);
                out.value += norm * value / len;
                out.total_terms += 1;
                if !flows {
                    out.clipped_terms += 1;
                } else if adv != 0.0 {
                    policy.add_token_score_gradient(q, t, tok, norm * adv * ratio / len, &mut out.grad);
                }
            }
        }
    }
    Ok(out)
}

/// Contiguous, near-equal chunks of `0..g`, at most `parts` of them.
fn chunks(g: usize, parts: usize) -> Vec<Vec<usize>> {
    let n = parts.min(g).max(1);
    (0..n).map(|c| (c * g / n..(c + 1) * g / n).collect()).collect()
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

struct StepStats {
    clipped: usize,
    terms: usize,
    grad_norm_sum: f64,
}

/// Runs the inner minibatch ascent steps; `eval` computes a surrogate on a chunk.
fn inner_updates<F>(policy: &mut TabularPolicy, cfg: &TrainConfig, mut eval: F) -> Result<StepStats>
where
    F: FnMut(&TabularPolicy, &[usize]) -> Result<SurrogateEval>,
{
    let parts = chunks(cfg.group_size, cfg.inner_epochs);
    let mut stats = StepStats { clipped: 0, terms: 0, grad_norm_sum: 0.0 };
    for e in 0..cfg.inner_epochs {
        let s = eval(policy, &parts[e % parts.len()])?;
        stats.clipped += s.clipped_terms;
        stats.terms += s.total_terms;
        stats.grad_norm_sum += l2(&s.grad);
        policy.ascend(&s.grad, cfg.learning_rate)?;
    }
    Ok(stats)
}

/// Bank-level metrics of a policy: exact expected reward per question, and
/// risk measures of that per-question success distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyMetrics {
    pub mean_reward: f64,
    pub entropy: f64,
    pub rvar_lower: f64,
    pub mvar: f64,
}

pub fn policy_metrics(
    policy: &TabularPolicy,
    bank: &QuestionBank,
    cfg: &TrainConfig,
    iteration: u64,
) -> Result<PolicyMetrics> {
    let weights = bank.question_probs();
    let mut per_question = Vec::with_capacity(bank.len());
    let mut entropy = 0.0;
    for (q, w) in bank.questions.iter().zip(&weights) {
        per_question.push((expected_reward(policy, q, cfg.reward_mode)?, *w));
        let mut rng = streams::stream(cfg.seed, &[streams::ENTROPY, iteration, q.id as u64]);
        entropy += w * policy.entropy(q.id, cfg.entropy_cap, Some((&mut rng, cfg.entropy_mc_samples)))?.nats;
    }
    let mean_reward = per_question.iter().map(|(r, w)| r * w).sum();
    let dist = EmpiricalDistribution::from_weighted(per_question)?;
    Ok(PolicyMetrics {
        mean_reward,
        entropy,
        rvar_lower: exact_rvar(&dist, 0.0, cfg.risk.alpha)?,
        mvar: exact_mvar(&dist, &cfg.risk)?,
    })
}

/// Pass@{1,8,16} and Avg@k from `eval_samples` fresh binary-verified draws
/// per question, averaged over the bank's questions.
pub fn evaluate(policy: &TabularPolicy, bank: &QuestionBank, cfg: &TrainConfig, iteration: u64) -> Result<EvalRecord> {
    let n = cfg.eval_samples;
    let mut pass = [0.0; 3];
    let mut avg = 0.0;
    for q in &bank.questions {
        let mut rng = streams::stream(cfg.seed, &[streams::EVAL, iteration, q.id as u64]);
        let mut c = 0;
        for _ in 0..n {
            let y = policy.sample_response(q.id, &mut rng)?;
            if verify(q, &y, RewardMode::Binary)? == 1.0 {
                c += 1;
            }
        }
        for (slot, &k) in pass.iter_mut().zip(EVAL_KS.iter()) {
            *slot += pass_at_k(n, c, k)?;
        }
        avg += c as f64 / n as f64;
    }
    let m = bank.len() as f64;
    Ok(EvalRecord {
        iteration,
        pass_at_1: pass[0] / m,
        pass_at_8: pass[1] / m,
        pass_at_16: pass[2] / m,
        avg_at_k: avg / m,
    })
}

fn finish_iteration(
    state: TrainerState,
    policy: TabularPolicy,
    trackers: Option<QuantileTrackerState>,
    bank: &QuestionBank,
    cfg: &TrainConfig,
    stats: StepStats,
) -> Result<(TrainerState, IterationLog)> {
    let k = state.iteration + 1;
    let m = policy_metrics(&policy, bank, cfg, k)?;
    let log = IterationLog {
        iteration: k,
        mean_reward: m.mean_reward,
        entropy: m.entropy,
        rvar_lower: m.rvar_lower,
        mvar: m.mvar,
        q_alpha: trackers.map(|t| t.q_alpha),
        q_beta: trackers.map(|t| t.q_beta),
        clip_fraction: if stats.terms == 0 { 0.0 } else { stats.clipped as f64 / stats.terms as f64 },
        grad_norm: stats.grad_norm_sum / cfg.inner_epochs as f64,
    };
    let next = TrainerState { reference_policy: state.policy, policy, trackers, iteration: k };
    Ok((next, log))
}

/// One outer iteration of the risk-based method: collect `B × G` rollouts,
/// draw one bundle assignment, step both quantile trackers once, compute
/// bundle advantages with the updated trackers, then run the clipped inner
/// updates against the policy frozen at the start of the iteration.
pub fn riskpo_iteration(state: TrainerState, bank: &QuestionBank, cfg: &TrainConfig) -> Result<(TrainerState, IterationLog)> {
    let objective = match cfg.objective {
        Objective::Riskpo => BundleObjective::Mvar,
        Objective::RiskSeeking => BundleObjective::RiskSeeking,
        other => {
            return Err(Error::InvalidConfig {
                field: "objective".into(),
                reason: format!("{} is not a bundle objective", other.as_str()),
            })
        }
    };
    let k = state.iteration + 1;
    let reference = state.policy.clone();
    let batch = collect_rollouts(&reference, bank, cfg.bundle_size, cfg.group_size, cfg.reward_mode, cfg.seed, k)?;
    let mut brng = streams::stream(cfg.seed, &[streams::BUNDLES, k]);
    let assignment = assign_bundles(cfg.bundle_size, cfg.group_size, &mut brng)?;
    let scores = compute_bundle_scores(&batch, &assignment)?;

    let start = match state.trackers {
        Some(t) => t,
        None => QuantileTrackerState::from_scores(&scores, &cfg.risk)?,
    };
    let trackers = start.update(&scores, cfg.gamma(k), &cfg.risk)?;
    let advantages = bundle_advantages(&scores, &trackers, &cfg.risk, objective)?;
    let bundles = BundleSet { scores, advantages };

    let mut policy = reference;
    let stats = inner_updates(&mut policy, cfg, |p, subset| {
        clipped_bundle_objective_on(&batch, &bundles, &assignment, p, cfg.epsilon, subset)
    })?;
    finish_iteration(state, policy, Some(trackers), bank, cfg, stats)
}

/// One outer iteration of the group baseline (`grpo`: standardized,
/// `mean`: centered only). Trackers are left untouched.
pub fn grpo_iteration(state: TrainerState, bank: &QuestionBank, cfg: &TrainConfig) -> Result<(TrainerState, IterationLog)> {
    let standardize = match cfg.objective {
        Objective::Grpo => true,
        Objective::Mean => false,
        other => {
            return Err(Error::InvalidConfig {
                field: "objective".into(),
                reason: format!("{} is not a group objective", other.as_str()),
            })
        }
    };
    if cfg.group_size < 2 {
        return Err(Error::DegenerateGroup(cfg.group_size));
    }
    let k = state.iteration + 1;
    let reference = state.policy.clone();
    let batch = collect_rollouts(&reference, bank, cfg.bundle_size, cfg.group_size, cfg.reward_mode, cfg.seed, k)?;
    let advantages = batch
        .rewards
        .iter()
        .map(|row| if standardize { grpo_advantages(row) } else { mean_advantages(row) })
        .collect::<Result<Vec<_>>>()?;

    let mut policy = reference;
    let stats = inner_updates(&mut policy, cfg, |p, subset| grpo_surrogate_on(&batch, &advantages, p, cfg.epsilon, subset))?;
    let trackers = state.trackers;
    finish_iteration(state, policy, trackers, bank, cfg, stats)
}

pub fn iteration(state: TrainerState, bank: &QuestionBank, cfg: &TrainConfig) -> Result<(TrainerState, IterationLog)> {
    if cfg.objective.uses_trackers() {
        riskpo_iteration(state, bank, cfg)
    } else {
        grpo_iteration(state, bank, cfg)
    }
}

/// Progress reported by [`train_with`] in the order it is produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainEvent<'a> {
    Iteration(&'a IterationLog),
    Eval(&'a EvalRecord),
}

/// Runs `cfg.iterations` outer iterations, passing every row and evaluation
/// to `sink` as soon as it exists.
pub fn train_with<F>(cfg: &TrainConfig, bank: &QuestionBank, initial: TabularPolicy, mut sink: F) -> Result<RunLog>
where
    F: FnMut(TrainEvent<'_>) -> Result<()>,
{
    cfg.validate()?;
    bank.validate()?;
    bank.check_policy(&initial)?;
    let first = evaluate(&initial, bank, cfg, 0)?;
    sink(TrainEvent::Eval(&first))?;
    let mut evals = vec![first];
    let mut state = TrainerState::new(initial);
    let mut rows = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let (next, log) = iteration(state, bank, cfg)?;
        state = next;
        sink(TrainEvent::Iteration(&log))?;
        rows.push(log);
        let k = state.iteration;
        if (cfg.eval_every > 0 && k.is_multiple_of(cfg.eval_every as u64)) || k == cfg.iterations as u64 {
            let eval = evaluate(&state.policy, bank, cfg, k)?;
            sink(TrainEvent::Eval(&eval))?;
            evals.push(eval);
        }
    }
    Ok(RunLog { iterations: rows, evals, final_policy: state.policy })
}

pub fn train(cfg: &TrainConfig, bank: &QuestionBank, initial: TabularPolicy) -> Result<RunLog> {
    train_with(cfg, bank, initial, |_| Ok(()))
}
