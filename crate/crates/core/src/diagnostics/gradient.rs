//! Score-function gradient of the bundle MVaR against finite differences,
//! and Monte-Carlo convergence of the sampled estimator.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{assign_bundles, sample_categorical, verify, QuestionBank, RewardMode};
use crate::error::{Error, Result};
use crate::policy::{Response, TabularPolicy};
use crate::risk::{exact_mvar, exact_quantile, mvar_advantage, EmpiricalDistribution, RiskConfig};
use crate::streams;

use super::{CheckReport, Comparison, Relation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileMode {
    /// Differentiate the MVaR itself; quantiles move with θ. Requires both
    /// levels to sit strictly inside jumps of the bundle-score CDF.
    Exact,
    /// Differentiate `E_θ[A(R_B)]` with `A` built from the quantiles at the
    /// base point.
    Frozen,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientCheckSetup {
    pub risk: RiskConfig,
    pub bundle_size: usize,
    pub reward_mode: RewardMode,
    pub mode: QuantileMode,
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Largest number of enumerated bundle outcomes.
    pub outcome_cap: usize,
}

impl Default for GradientCheckSetup {
    fn default() -> Self {
        Self {
            risk: RiskConfig::default(),
            bundle_size: 1,
            reward_mode: RewardMode::Fractional,
            mode: QuantileMode::Exact,
            step: 1e-5,
            tolerance: 1e-6,
            outcome_cap: 1 << 20,
        }
    }
}

#[derive(Debug, Clone)]
struct SlotAtom {
    question: usize,
    response: Response,
    prob: f64,
    reward: f64,
}

fn slot_atoms(policy: &TabularPolicy, bank: &QuestionBank, mode: RewardMode, cap: usize) -> Result<Vec<SlotAtom>> {
    let mut atoms = Vec::new();
    for (q, w) in bank.questions.iter().zip(bank.question_probs()) {
        if w == 0.0 {
            continue;
        }
        for (y, p) in policy.enumerate_responses(q.id, cap)? {
            let reward = verify(q, &y, mode)?;
            atoms.push(SlotAtom { question: q.id, response: y, prob: w * p, reward });
        }
    }
    Ok(atoms)
}

/// Visits every ordered `b`-tuple of slot atoms with its probability and score.
fn for_each_bundle<F>(atoms: &[SlotAtom], b: usize, cap: usize, mut visit: F) -> Result<()>
where
    F: FnMut(&[usize], f64, f64) -> Result<()>,
{
    let n = atoms.len();
    let total = (n as u128).checked_pow(b as u32).unwrap_or(u128::MAX);
    if total > cap as u128 {
        return Err(Error::CapExceeded { size: total, cap });
    }
    let mut idx = vec![0usize; b];
    loop {
        let prob = idx.iter().map(|&k| atoms[k].prob).product();
        let score = idx.iter().map(|&k| atoms[k].reward).sum();
        visit(&idx, prob, score)?;
        let mut t = b;
        loop {
            if t == 0 {
                return Ok(());
            }
            t -= 1;
            idx[t] += 1;
            if idx[t] < n {
                break;
            }
            idx[t] = 0;
        }
    }
}

fn score_distribution(atoms: &[SlotAtom], b: usize, cap: usize) -> Result<EmpiricalDistribution> {
    let mut pairs = Vec::new();
    for_each_bundle(atoms, b, cap, |_, p, s| {
        pairs.push((s, p));
        Ok(())
    })?;
    EmpiricalDistribution::from_weighted(pairs)
}

/// Exact `E[A(R_B) · Σ_i ∇ log π(y_i | x_i)]` over all bundle outcomes.
fn exact_score_gradient(
    policy: &TabularPolicy,
    atoms: &[SlotAtom],
    setup: &GradientCheckSetup,
    q_alpha: f64,
    q_beta: f64,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; policy.logits().len()];
    for_each_bundle(atoms, setup.bundle_size, setup.outcome_cap, |idx, p, s| {
        let a = mvar_advantage(s, q_alpha, q_beta, setup.risk.omega)?;
        if a != 0.0 && p > 0.0 {
            for &k in idx {
                policy.add_score_gradient(atoms[k].question, &atoms[k].response, p * a, &mut grad)?;
            }
        }
        Ok(())
    })?;
    Ok(grad)
}

fn objective(
    policy: &TabularPolicy,
    bank: &QuestionBank,
    setup: &GradientCheckSetup,
    frozen: Option<(f64, f64)>,
) -> Result<f64> {
    let atoms = slot_atoms(policy, bank, setup.reward_mode, setup.outcome_cap)?;
    let dist = score_distribution(&atoms, setup.bundle_size, setup.outcome_cap)?;
    match frozen {
        None => exact_mvar(&dist, &setup.risk),
        Some((qa, qb)) => dist
            .values()
            .iter()
            .zip(dist.probs())
            .map(|(&s, &p)| mvar_advantage(s, qa, qb, setup.risk.omega).map(|a| a * p))
            .sum(),
    }
}

/// Gradient vectors and their agreement.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub report: CheckReport,
    pub score_function: Vec<f64>,
    pub finite_difference: Vec<f64>,
    pub relative_error: f64,
    pub quantiles: (f64, f64),
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Compares the exact score-function gradient of the bundle MVaR with
/// central finite differences over every logit.
///
/// In [`QuantileMode::Exact`], refuses instances where α or β lies within
/// `10·B·h` of a CDF value of the bundle score, since a perturbation could
/// then move the quantile to another atom.
pub fn gradient_check(policy: &TabularPolicy, bank: &QuestionBank, setup: &GradientCheckSetup) -> Result<GradientCheck> {
    let start = Instant::now();
    setup.risk.validate()?;
    bank.check_policy(policy)?;
    if setup.bundle_size == 0 {
        return Err(Error::InvalidConfig { field: "bundle_size".into(), reason: "must be >= 1".into() });
    }
    if !(setup.step > 0.0 && setup.step.is_finite()) {
        return Err(Error::InvalidStepSize(setup.step));
    }
    let atoms = slot_atoms(policy, bank, setup.reward_mode, setup.outcome_cap)?;
    let dist = score_distribution(&atoms, setup.bundle_size, setup.outcome_cap)?;
    let qa = exact_quantile(&dist, setup.risk.alpha)?;
    let qb = exact_quantile(&dist, setup.risk.beta)?;

    if setup.mode == QuantileMode::Exact {
        let margin = (10.0 * setup.bundle_size as f64 * setup.step).max(1e-9);
        let cdf = dist.cdf_values();
        for (level, name) in [(setup.risk.alpha, "alpha"), (setup.risk.beta, "beta")] {
            // The top CDF value is 1; β = 1 selects the maximum atom, which is stable.
            if let Some(f) = cdf[..cdf.len() - 1].iter().find(|f| (**f - level).abs() < margin) {
                return Err(Error::AtomCollision(format!(
                    "{name} = {level} is within {margin:e} of the CDF value {f}"
                )));
            }
        }
    }

    let score_function = exact_score_gradient(policy, &atoms, setup, qa, qb)?;
    let frozen = (setup.mode == QuantileMode::Frozen).then_some((qa, qb));
    let mut finite_difference = vec![0.0; policy.logits().len()];
    for (k, slot) in finite_difference.iter_mut().enumerate() {
        let mut plus = policy.clone();
        let mut minus = policy.clone();
        plus.logits_mut()[k] += setup.step;
        minus.logits_mut()[k] -= setup.step;
        let f_plus = objective(&plus, bank, setup, frozen)?;
        let f_minus = objective(&minus, bank, setup, frozen)?;
        *slot = (f_plus - f_minus) / (2.0 * setup.step);
    }

    let diff: Vec<f64> = score_function.iter().zip(&finite_difference).map(|(a, b)| a - b).collect();
    let scale = max_abs(&finite_difference);
    let relative_error = if scale == 0.0 { max_abs(&diff) } else { max_abs(&diff) / scale };
    let report = CheckReport::from_comparisons(
        "gradient",
        vec![Comparison::new("max relative error vs finite differences", relative_error, 0.0, setup.tolerance, Relation::Close)],
    )
    .with_note(format!("q_alpha = {qa}, q_beta = {qb}, |grad|_inf = {scale:e}"))
    .timed(start);
    Ok(GradientCheck { report, score_function, finite_difference, relative_error, quantiles: (qa, qb) })
}

/// Relative errors of the sampled estimator at each sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub samples: usize,
    pub errors: Vec<f64>,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub report: CheckReport,
    pub rows: Vec<ConvergenceRow>,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Sampled estimator from `n_bundles / G` batches: for each batch draw `B`
/// questions and `G` responses each, form bundles with a random assignment,
/// and average `A(R_{B_j}) Σ_i ∇ log π(y^i_{ξ_ij} | x_i)` over bundles.
/// Quantiles are held at the supplied values.
#[allow(clippy::too_many_arguments)]
pub fn sampled_gradient<R: Rng + ?Sized>(
    policy: &TabularPolicy,
    bank: &QuestionBank,
    setup: &GradientCheckSetup,
    quantiles: (f64, f64),
    group_size: usize,
    n_bundles: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if group_size == 0 || n_bundles == 0 || !n_bundles.is_multiple_of(group_size) {
        return Err(Error::InvalidConfig {
            field: "samples".into(),
            reason: format!("{n_bundles} bundles is not a positive multiple of G = {group_size}"),
        });
    }
    let b = setup.bundle_size;
    let weights = bank.question_probs();
    let mut grad = vec![0.0; policy.logits().len()];
    let scale = 1.0 / n_bundles as f64;
    for _ in 0..n_bundles / group_size {
        let questions: Vec<usize> = (0..b).map(|_| sample_categorical(&weights, rng.random())).collect();
        let mut responses = Vec::with_capacity(b);
        let mut rewards = Vec::with_capacity(b);
        for &q in &questions {
            let mut row = Vec::with_capacity(group_size);
            let mut rrow = Vec::with_capacity(group_size);
            for _ in 0..group_size {
                let y = policy.sample_response(q, rng)?;
                rrow.push(verify(&bank.questions[q], &y, setup.reward_mode)?);
                row.push(y);
            }
            responses.push(row);
            rewards.push(rrow);
        }
        let assignment = assign_bundles(b, group_size, rng)?;
        for j in 0..group_size {
            let score: f64 = (0..b).map(|i| rewards[i][assignment.permutations[i][j]]).sum();
            let a = mvar_advantage(score, quantiles.0, quantiles.1, setup.risk.omega)?;
            if a == 0.0 {
                continue;
            }
            for i in 0..b {
                let y = &responses[i][assignment.permutations[i][j]];
                policy.add_score_gradient(questions[i], y, scale * a, &mut grad)?;
            }
        }
    }
    Ok(grad)
}

/// Median relative L2 error of the sampled estimator against the exact
/// gradient at each sample size, over the given seeds. Passes when medians
/// do not increase with `N` and the largest `N` is within `final_tolerance`.
#[allow(clippy::too_many_arguments)]
pub fn mc_gradient_convergence(
    policy: &TabularPolicy,
    bank: &QuestionBank,
    setup: &GradientCheckSetup,
    group_size: usize,
    sample_sizes: &[usize],
    seeds: &[u64],
    final_tolerance: f64,
) -> Result<ConvergenceReport> {
    let start = Instant::now();
    if sample_sizes.is_empty() || seeds.is_empty() {
        return Err(Error::Empty("sample sizes and seeds"));
    }
    let atoms = slot_atoms(policy, bank, setup.reward_mode, setup.outcome_cap)?;
    let dist = score_distribution(&atoms, setup.bundle_size, setup.outcome_cap)?;
    let qa = exact_quantile(&dist, setup.risk.alpha)?;
    let qb = exact_quantile(&dist, setup.risk.beta)?;
    let exact = exact_score_gradient(policy, &atoms, setup, qa, qb)?;
    let exact_norm = exact.iter().map(|x| x * x).sum::<f64>().sqrt();

    let mut rows = Vec::with_capacity(sample_sizes.len());
    for &n in sample_sizes {
        let mut errors = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut rng = streams::stream(seed, &[n as u64]);
            let est = sampled_gradient(policy, bank, setup, (qa, qb), group_size, n, &mut rng)?;
            let err = est.iter().zip(&exact).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            errors.push(if exact_norm == 0.0 { err } else { err / exact_norm });
        }
        let median = median(&errors);
        rows.push(ConvergenceRow { samples: n, errors, median });
    }

    let mut comparisons = Vec::new();
    for pair in rows.windows(2) {
        comparisons.push(Comparison::new(
            format!("median error at N={} vs N={}", pair[1].samples, pair[0].samples),
            pair[1].median,
            pair[0].median,
            0.0,
            Relation::AtMost,
        ));
    }
    let last = rows.last().expect("non-empty");
    comparisons.push(Comparison::new(
        format!("median relative error at N={}", last.samples),
        last.median,
        0.0,
        final_tolerance,
        Relation::Close,
    ));
    let report = CheckReport::from_comparisons("gradient_mc", comparisons).timed(start);
    Ok(ConvergenceReport { report, rows })
}
