//! First-order entropy change under a natural-gradient step.

use std::time::Instant;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::policy::{softmax, PolicyKind, TabularPolicy};

use super::{CheckReport, Comparison, Relation};

/// `−Cov_{y∼π}(log π(y), A(y))`: the entropy derivative along `z += η·A`.
pub fn first_order_entropy_change(probs: &[f64], advantages: &[f64]) -> Result<f64> {
    if probs.len() != advantages.len() {
        return Err(Error::ShapeMismatch(format!("{} probabilities, {} advantages", probs.len(), advantages.len())));
    }
    let e_log: f64 = probs.iter().map(|p| p * p.ln()).sum();
    let e_adv: f64 = probs.iter().zip(advantages).map(|(p, a)| p * a).sum();
    let cov: f64 = probs.iter().zip(advantages).map(|(p, a)| p * (p.ln() - e_log) * (a - e_adv)).sum();
    Ok(-cov)
}

fn exact_entropy(policy: &TabularPolicy, question: usize) -> Result<f64> {
    let cap = policy.vocab_size();
    Ok(policy.entropy(question, cap, None::<(&mut ChaCha8Rng, usize)>)?.nats)
}

/// Checks that `H(π_η) − H(π) + η·Cov(log π, A)` shrinks quadratically:
/// the residual ratio `r(η) / r(η/2)` must lie in `[3, 5]` for every `η`.
/// For a constant advantage row, checks instead that the covariance and the
/// entropy change both vanish.
pub fn entropy_step_check(policy: &TabularPolicy, question: usize, advantages: &[f64], etas: &[f64]) -> Result<CheckReport> {
    let start = Instant::now();
    if policy.kind() != PolicyKind::Bandit {
        return Err(Error::Unsupported("entropy step check needs a bandit policy".into()));
    }
    if etas.len() < 2 {
        return Err(Error::InvalidConfig { field: "etas".into(), reason: "need at least two step sizes".into() });
    }
    if let Some(&bad) = etas.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        return Err(Error::InvalidStepSize(bad));
    }
    if question >= policy.num_questions() {
        return Err(Error::UnknownQuestion { id: question, count: policy.num_questions() });
    }
    let n = policy.vocab_size();
    if advantages.len() != n {
        return Err(Error::ShapeMismatch(format!("{} advantages for {n} answers", advantages.len())));
    }
    let probs = softmax(policy.row(question, 0));
    let slope = first_order_entropy_change(&probs, advantages)?;
    let h0 = exact_entropy(policy, question)?;
    let mut table = vec![0.0; policy.logits().len()];
    let o = policy.row_offset(question, 0);
    table[o..o + n].copy_from_slice(advantages);
    let delta = |eta: f64| -> Result<f64> { Ok(exact_entropy(&policy.natural_gradient_step(&table, eta)?, question)? - h0) };

    let constant = advantages.iter().all(|a| *a == advantages[0]);
    let mut comparisons = Vec::new();
    if constant {
        comparisons.push(Comparison::new("covariance", slope, 0.0, 1e-12, Relation::Close));
        for &eta in etas {
            comparisons.push(Comparison::new(format!("entropy change at eta={eta}"), delta(eta)?, 0.0, 1e-12, Relation::Close));
        }
    } else {
        for &eta in etas {
            let r_full = (delta(eta)? - eta * slope).abs();
            let r_half = (delta(eta / 2.0)? - eta / 2.0 * slope).abs();
            let ratio = if r_half > 0.0 { r_full / r_half } else { f64::INFINITY };
            comparisons.push(Comparison::new(format!("residual ratio at eta={eta}"), ratio, 4.0, 1.0, Relation::Close));
        }
    }
    Ok(CheckReport::from_comparisons("entropy", comparisons)
        .with_note(format!("first-order entropy change per unit step: {slope:e}"))
        .timed(start))
}
