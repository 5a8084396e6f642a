//! Unbiased Pass@k and reward summaries.

use crate::error::{Error, Result};
use crate::risk::{exact_mvar, exact_rvar, EmpiricalDistribution, RiskConfig};

/// Largest `n` for which every binomial `C(n, k)` is an exact `f64`.
const EXACT_BINOMIAL_MAX_N: usize = 56;

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    // Each partial product is itself a binomial, so the division is exact.
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i as u128 + 1))
}

/// `1 − C(n−c, k) / C(n, k)`: probability that `k` draws without replacement
/// from `n` samples with `c` correct include a correct one.
pub fn pass_at_k(n: usize, c: usize, k: usize) -> Result<f64> {
    if c > n {
        return Err(Error::InvalidConfig { field: "c".into(), reason: format!("{c} correct out of {n} samples") });
    }
    if k == 0 || k > n {
        return Err(Error::InvalidConfig { field: "k".into(), reason: format!("k = {k} with n = {n}") });
    }
    if n - c < k {
        return Ok(1.0);
    }
    if c == 0 {
        return Ok(0.0);
    }
    if n <= EXACT_BINOMIAL_MAX_N {
        let total = binomial(n, k);
        let miss = binomial(n - c, k);
        return Ok((total - miss) as f64 / total as f64);
    }
    let miss: f64 = (n - c + 1..=n).map(|i| 1.0 - k as f64 / i as f64).product();
    Ok(1.0 - miss)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardMetrics {
    pub mean: f64,
    pub rvar_lower: f64,
    pub mvar: f64,
    /// Mean reward over the k samples of each question, averaged; equals `mean`.
    pub avg_at_k: f64,
}

/// Summary of a reward sample under the empirical distribution.
pub fn reward_metrics(samples: &[f64], cfg: &RiskConfig) -> Result<RewardMetrics> {
    let dist = EmpiricalDistribution::from_samples(samples)?;
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    Ok(RewardMetrics {
        mean,
        rvar_lower: exact_rvar(&dist, 0.0, cfg.alpha)?,
        mvar: exact_mvar(&dist, cfg)?,
        avg_at_k: mean,
    })
}
