//! Risk measures over discrete reward distributions and the advantage
//! functions derived from them.
//!
//! Quantiles follow the left-continuous generalized inverse
//! `F⁻¹(u) = inf { r : F(r) >= u }`. Range and mixed value-at-risk are
//! evaluated in quantile-integral form, `∫ F⁻¹(u) du` over the relevant level
//! interval, which stays well defined when the distribution has atoms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PROB_SUM_TOL: f64 = 1e-12;

/// Quantile levels and lower-tail weight of the mixed value-at-risk objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskConfig {
    pub alpha: f64,
    pub beta: f64,
    pub omega: f64,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self { alpha: 0.2, beta: 0.8, omega: 0.5 }
    }
}

impl RiskConfig {
    pub fn new(alpha: f64, beta: f64, omega: f64) -> Result<Self> {
        let cfg = Self { alpha, beta, omega };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.alpha.is_finite() && self.beta.is_finite() && self.omega.is_finite();
        if !finite {
            return Err(Error::InvalidRiskConfig("non-finite parameter".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < self.beta && self.beta <= 1.0) {
            return Err(Error::InvalidRiskConfig(format!(
                "need 0 < alpha < beta <= 1, got alpha={}, beta={}",
                self.alpha, self.beta
            )));
        }
        if self.omega < 0.0 {
            return Err(Error::InvalidRiskConfig(format!("omega must be >= 0, got {}", self.omega)));
        }
        Ok(())
    }
}

/// A finitely supported distribution with strictly increasing atom values.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    values: Vec<f64>,
    probs: Vec<f64>,
}

impl EmpiricalDistribution {
    /// Builds a distribution from atoms that are already sorted and merged.
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidDistribution("no atoms".into()));
        }
        let mut total = 0.0;
        for (k, &(v, p)) in atoms.iter().enumerate() {
            if !v.is_finite() || !p.is_finite() {
                return Err(Error::InvalidDistribution(format!("non-finite atom at index {k}")));
            }
            if p <= 0.0 {
                return Err(Error::InvalidDistribution(format!(
                    "atom {k} has non-positive probability {p}"
                )));
            }
            if k > 0 && v <= atoms[k - 1].0 {
                return Err(Error::InvalidDistribution(format!(
                    "values not strictly increasing at index {k}"
                )));
            }
            total += p;
        }
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::InvalidDistribution(format!("probabilities sum to {total}")));
        }
        let (values, probs) = atoms.into_iter().unzip();
        Ok(Self { values, probs })
    }

    /// Sorts, merges equal values and drops zero-mass atoms.
    pub fn from_weighted<I>(atoms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        let mut raw: Vec<(f64, f64)> = atoms.into_iter().collect();
        if raw.iter().any(|(v, p)| !v.is_finite() || !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidDistribution("non-finite value or negative probability".into()));
        }
        raw.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(raw.len());
        for (v, p) in raw {
            if p == 0.0 {
                continue;
            }
            match merged.last_mut() {
                Some(last) if last.0 == v => last.1 += p,
                _ => merged.push((v, p)),
            }
        }
        Self::new(merged)
    }

    /// Equal-weight empirical distribution of a sample.
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("samples"));
        }
        let w = 1.0 / samples.len() as f64;
        Self::from_weighted(samples.iter().map(|&s| (s, w)))
    }

    pub fn point_mass(value: f64) -> Result<Self> {
        Self::new(vec![(value, 1.0)])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().zip(&self.probs).map(|(v, p)| v * p).sum()
    }

    /// CDF evaluated at each atom, `F(v_k)`. The last entry is pinned to 1.
    pub fn cdf_values(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let n = self.probs.len();
        self.probs
            .iter()
            .enumerate()
            .map(|(k, p)| {
                acc += p;
                if k + 1 == n {
                    1.0
                } else {
                    acc
                }
            })
            .collect()
    }

    /// `∫_lo^hi F⁻¹(u) du`, summed exactly over the CDF sub-intervals.
    pub(crate) fn quantile_integral(&self, lo: f64, hi: f64) -> f64 {
        let mut total = 0.0;
        let mut left: f64 = 0.0;
        for (v, right) in self.values.iter().zip(self.cdf_values()) {
            let overlap = right.min(hi) - left.max(lo);
            if overlap > 0.0 {
                total += v * overlap;
            }
            left = right;
            if left >= hi {
                break;
            }
        }
        total
    }
}

/// `g(z, a, b) = (z − a)⁺ − (z − b)⁺ + a − b`, the kernel of the RVaR gradient.
pub fn g_function(z: f64, a: f64, b: f64) -> Result<f64> {
    check_order(a, b)?;
    // Same value as (a − z)⁺ − (b − z)⁺, which rounds to exactly 0 above b.
    Ok(pos(a - z) - pos(b - z))
}

/// Left-continuous generalized inverse of the CDF at level `u`.
pub fn exact_quantile(dist: &EmpiricalDistribution, u: f64) -> Result<f64> {
    if !(u > 0.0 && u <= 1.0) {
        return Err(Error::LevelOutOfRange(u));
    }
    let cdf = dist.cdf_values();
    let k = cdf.iter().position(|&c| c >= u).unwrap_or(cdf.len() - 1);
    Ok(dist.values[k])
}

/// Range value-at-risk `(β−α)⁻¹ ∫_α^β F⁻¹(u) du`.
pub fn exact_rvar(dist: &EmpiricalDistribution, alpha: f64, beta: f64) -> Result<f64> {
    if !(alpha >= 0.0 && alpha < beta && beta <= 1.0) {
        return Err(Error::InvalidRange { alpha, beta });
    }
    Ok(dist.quantile_integral(alpha, beta) / (beta - alpha))
}

/// Unnormalized mixed value-at-risk `(1+ω)∫_0^α F⁻¹ + ∫_α^β F⁻¹`.
///
/// A constant reward `c` yields `c·((1+ω)α + β − α)`, not `c`.
pub fn exact_mvar(dist: &EmpiricalDistribution, cfg: &RiskConfig) -> Result<f64> {
    cfg.validate()?;
    let mut total = 0.0;
    let mut left = 0.0;
    for (v, right) in dist.values.iter().zip(dist.cdf_values()) {
        let lower = right.min(cfg.alpha) - left;
        if lower > 0.0 {
            total += (1.0 + cfg.omega) * v * lower;
        }
        let middle = right.min(cfg.beta) - left.max(cfg.alpha);
        if middle > 0.0 {
            total += v * middle;
        }
        left = right;
        if left >= cfg.beta {
            break;
        }
    }
    Ok(total)
}

/// Bundle advantage for the risk-averse objective:
/// `−(1+ω)(q_α − s)⁺ + g(s, q_α, q_β)`. Never positive.
pub fn mvar_advantage(score: f64, q_alpha: f64, q_beta: f64, omega: f64) -> Result<f64> {
    check_order(q_alpha, q_beta)?;
    check_omega(omega)?;
    Ok(-(1.0 + omega) * pos(q_alpha - score) + g_function(score, q_alpha, q_beta)?)
}

/// Bundle advantage for the mirrored risk-seeking objective
/// `(1+ω)(1−β)·RVaR_{β:1} + (β−α)·RVaR_{α:β}`:
/// `(1+ω)(s − q_β)⁺ + g(s, q_α, q_β)`.
///
/// Differentiating the upper segment per score also yields a constant
/// `(1+ω)(q_β − q_max)` term. Constants do not move the expected
/// score-function gradient, so it is dropped.
pub fn risk_seeking_advantage(score: f64, q_alpha: f64, q_beta: f64, omega: f64) -> Result<f64> {
    check_order(q_alpha, q_beta)?;
    check_omega(omega)?;
    Ok((1.0 + omega) * pos(score - q_beta) + g_function(score, q_alpha, q_beta)?)
}

/// Group-standardized advantages `(R_i − mean)/std` with the population std.
///
/// A group with identical rewards yields all zeros (no smoothing epsilon).
pub fn grpo_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::DegenerateGroup(rewards.len()));
    }
    if rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// Group-mean baseline without standardization, `R_i − mean`.
pub fn mean_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::DegenerateGroup(rewards.len()));
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    Ok(rewards.iter().map(|r| r - mean).collect())
}

/// Online estimates of the α- and β-quantiles of the bundle score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileTrackerState {
    pub q_alpha: f64,
    pub q_beta: f64,
    pub step: u64,
}

impl QuantileTrackerState {
    pub fn new(q_alpha: f64, q_beta: f64) -> Self {
        Self { q_alpha, q_beta, step: 0 }
    }

    /// Starts both trackers at the empirical quantiles of `scores`.
    pub fn from_scores(scores: &[f64], cfg: &RiskConfig) -> Result<Self> {
        let dist = EmpiricalDistribution::from_samples(scores)?;
        Ok(Self::new(exact_quantile(&dist, cfg.alpha)?, exact_quantile(&dist, cfg.beta)?))
    }

    /// One Robbins–Monro step: `q ← q + γ(level − mean 1{s < q})` for both levels.
    ///
    /// Scores equal to a tracker do not count as below it.
    pub fn update(&self, scores: &[f64], gamma: f64, cfg: &RiskConfig) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Empty("bundle scores"));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidStepSize(gamma));
        }
        let n = scores.len() as f64;
        let below = |q: f64| scores.iter().filter(|&&s| s < q).count() as f64 / n;
        Ok(Self {
            q_alpha: self.q_alpha + gamma * (cfg.alpha - below(self.q_alpha)),
            q_beta: self.q_beta + gamma * (cfg.beta - below(self.q_beta)),
            step: self.step + 1,
        })
    }
}

/// Free-function form of [`QuantileTrackerState::update`].
pub fn quantile_tracker_update(
    state: &QuantileTrackerState,
    bundle_scores: &[f64],
    gamma_k: f64,
    cfg: &RiskConfig,
) -> Result<QuantileTrackerState> {
    state.update(bundle_scores, gamma_k, cfg)
}

/// `Cov(R, V)` of a finite joint given as `(r, v, probability)` triples.
pub fn covariance(joint: &[(f64, f64, f64)]) -> Result<f64> {
    check_joint(joint)?;
    let er: f64 = joint.iter().map(|(r, _, p)| r * p).sum();
    let ev: f64 = joint.iter().map(|(_, v, p)| v * p).sum();
    Ok(joint.iter().map(|(r, v, p)| p * (r - er) * (v - ev)).sum())
}

/// `Cov(R, V)` through the layer-cake form `∫ Cov(1{R > t}, V) dt`.
///
/// The integrand is constant between consecutive support points of `R`,
/// so the integral is a finite sum over inter-atom intervals.
pub fn layer_cake_covariance(joint: &[(f64, f64, f64)]) -> Result<f64> {
    check_joint(joint)?;
    let ev: f64 = joint.iter().map(|(_, v, p)| v * p).sum();
    let mut order: Vec<usize> = (0..joint.len()).collect();
    order.sort_by(|&a, &b| joint[a].0.total_cmp(&joint[b].0));

    // Tail sums of P(R > t) and E[V·1{R > t}] walking down from the top atom.
    let mut total = 0.0;
    let mut tail_p = 0.0;
    let mut tail_v = 0.0;
    let mut k = order.len();
    while k > 0 {
        let r = joint[order[k - 1]].0;
        while k > 0 && joint[order[k - 1]].0 == r {
            let (_, v, p) = joint[order[k - 1]];
            tail_p += p;
            tail_v += v * p;
            k -= 1;
        }
        if k == 0 {
            break;
        }
        let width = r - joint[order[k - 1]].0;
        total += (tail_v - tail_p * ev) * width;
    }
    Ok(total)
}

fn check_joint(joint: &[(f64, f64, f64)]) -> Result<()> {
    if joint.is_empty() {
        return Err(Error::Empty("joint distribution"));
    }
    let mut total = 0.0;
    for &(r, v, p) in joint {
        if !r.is_finite() || !v.is_finite() || !p.is_finite() || p < 0.0 {
            return Err(Error::InvalidDistribution("invalid joint entry".into()));
        }
        total += p;
    }
    if (total - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidDistribution(format!("joint probabilities sum to {total}")));
    }
    Ok(())
}

#[inline]
fn pos(x: f64) -> f64 {
    x.max(0.0)
}

fn check_order(a: f64, b: f64) -> Result<()> {
    if a > b || a.is_nan() || b.is_nan() {
        return Err(Error::QuantileOrder { lower: a, upper: b });
    }
    Ok(())
}

fn check_omega(omega: f64) -> Result<()> {
    if !(omega >= 0.0 && omega.is_finite()) {
        return Err(Error::InvalidRiskConfig(format!("omega must be >= 0, got {omega}")));
    }
    Ok(())
}
