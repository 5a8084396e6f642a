//! Check suites run by `riskpo check`.

use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use riskpo_core::diagnostics::instances::{canonical_gradient_instance, sample_tail_instance};
use riskpo_core::diagnostics::{
    covariance_comparison, entropy_step_check, gradient_check, joint_score_reward, mc_gradient_convergence,
    monotone_transform_check, CheckReport, CheckStatus, Comparison, GradientCheckSetup, Relation,
};
use riskpo_core::risk::{covariance, exact_mvar, exact_quantile, exact_rvar, layer_cake_covariance};
use riskpo_core::{streams, EmpiricalDistribution, PolicyKind, RewardMode, RiskConfig, TabularPolicy};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Grad,
    Entropy,
    Cov,
    LayerCake,
    Transform,
    All,
}

impl FromStr for Suite {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grad" => Ok(Suite::Grad),
            "entropy" => Ok(Suite::Entropy),
            "cov" => Ok(Suite::Cov),
            "layercake" => Ok(Suite::LayerCake),
            "transform" => Ok(Suite::Transform),
            "all" => Ok(Suite::All),
            other => Err(CliError::Usage(format!(
                "unknown suite `{other}` (grad, entropy, cov, layercake, transform, all)"
            ))),
        }
    }
}

/// Check tags used to derive per-check generator streams.
const GRAD: u64 = 101;
const MVAR: u64 = 102;
const ENTROPY: u64 = 103;
const LAYER: u64 = 104;
const COV: u64 = 105;
const TRANSFORM: u64 = 106;

fn rng(seed: u64, tag: u64) -> ChaCha8Rng {
    streams::stream(seed, &[tag])
}

/// Score-function gradient against finite differences on the canonical
/// two-question instance.
pub fn gradient_canonical() -> Result<CheckReport> {
    let (bank, policy) = canonical_gradient_instance()?;
    let check = gradient_check(&policy, &bank, &GradientCheckSetup::default())?;
    let mut report = check.report;
    report.name = "grad/canonical".into();
    Ok(report)
}

/// Median relative error of the sampled gradient at N = 1e3, 1e4, 1e5 over
/// ten seeds; at most 5% at the largest N.
pub fn gradient_monte_carlo(seed: u64) -> Result<CheckReport> {
    let (bank, policy) = canonical_gradient_instance()?;
    let seeds: Vec<u64> = (0..10).map(|k| streams::derive_seed(seed, &[GRAD, k])).collect();
    let conv = mc_gradient_convergence(&policy, &bank, &GradientCheckSetup::default(), 10, &[1_000, 10_000, 100_000], &seeds, 0.05)?;
    let mut report = conv.report;
    report.name = "grad/monte_carlo".into();
    for row in &conv.rows {
        report.notes.push(format!("N={}: median relative error {:.4}", row.samples, row.median));
    }
    Ok(report)
}

fn random_distribution<R: Rng>(rng: &mut R) -> Result<EmpiricalDistribution> {
    let n = rng.random_range(1..=12);
    // A coarse grid produces ties, which exercise the atom merging.
    let atoms: Vec<(f64, f64)> =
        (0..n).map(|_| (rng.random_range(-20..=20) as f64 * 0.25, rng.random::<f64>() + 1e-3)).collect();
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    Ok(EmpiricalDistribution::from_weighted(atoms.into_iter().map(|(v, w)| (v, w / total)))?)
}

/// `MVaR = (1+ω)α·RVaR_{0:α} + (β−α)·RVaR_{α:β}` on random distributions.
pub fn mvar_identity(seed: u64, cases: usize) -> Result<CheckReport> {
    let start = Instant::now();
    let mut rng = rng(seed, MVAR);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let dist = random_distribution(&mut rng)?;
        let alpha = rng.random_range(0.01..0.98);
        let beta = rng.random_range(alpha + 0.01..=1.0);
        let omega = rng.random_range(0.0..3.0);
        let cfg = RiskConfig::new(alpha, beta, omega)?;
        let direct = exact_mvar(&dist, &cfg)?;
        let split = (1.0 + omega) * alpha * exact_rvar(&dist, 0.0, alpha)? + (beta - alpha) * exact_rvar(&dist, alpha, beta)?;
        worst = worst.max((direct - split).abs());
    }
    Ok(CheckReport::from_comparisons(
        "grad/mvar_identity",
        vec![Comparison::new(format!("max deviation over {cases} distributions"), worst, 0.0, 1e-12, Relation::Close)],
    )
    .timed(start))
}

/// Residual ratio of the entropy step on random bandit policies.
pub fn entropy_ratios(seed: u64, policies: usize, etas: &[f64]) -> Result<CheckReport> {
    let start = Instant::now();
    let mut rng = rng(seed, ENTROPY);
    let mut comparisons = Vec::new();
    for p in 0..policies {
        let n = rng.random_range(3..=8);
        let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let adv: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let policy = TabularPolicy::from_logits(PolicyKind::Bandit, 1, 1, n, logits)?;
        let report = entropy_step_check(&policy, 0, &adv, etas)?;
        comparisons.extend(report.comparisons.into_iter().map(|mut c| {
            c.label = format!("policy {p}: {}", c.label);
            c
        }));
    }
    Ok(CheckReport::from_comparisons("entropy/step_ratio", comparisons).timed(start))
}

/// Layer-cake sum against direct covariance on random finite joints.
pub fn layer_cake(seed: u64, cases: usize) -> Result<CheckReport> {
    let start = Instant::now();
    let mut rng = rng(seed, LAYER);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let n = rng.random_range(1..=20);
        let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
        let total: f64 = w.iter().sum();
        let joint: Vec<(f64, f64, f64)> = w
            .iter()
            .map(|p| (rng.random_range(-10..=10) as f64 * 0.3, rng.random_range(-5.0..5.0), p / total))
            .collect();
        worst = worst.max((layer_cake_covariance(&joint)? - covariance(&joint)?).abs());
    }
    Ok(CheckReport::from_comparisons(
        "layercake",
        vec![Comparison::new(format!("max deviation over {cases} joints"), worst, 0.0, 1e-10, Relation::Close)],
    )
    .timed(start))
}

/// Covariance ordering on exactly enumerated instances that meet the
/// two-tail condition.
pub fn covariance_ordering(seed: u64, instances: usize) -> Result<CheckReport> {
    let start = Instant::now();
    let cfg = RiskConfig::default();
    let mut rng = rng(seed, COV);
    let mut comparisons = Vec::new();
    let mut draws = 0;
    let mut mean_violations = 0usize;
    let mut rs_violations = 0usize;
    for _ in 0..instances {
        let (bank, policy, tries) = sample_tail_instance(&mut rng, 8, &cfg, 10_000)?;
        draws += tries;
        let joint = joint_score_reward(&policy, &bank, RewardMode::Fractional, 1 << 16)?;
        let (report, s) = covariance_comparison(&joint, &cfg)?;
        if report.status == CheckStatus::PreconditionUnmet {
            return Err(CliError::Usage("sampled instance lost the tail condition".into()));
        }
        if s.mvar > s.mean + 1e-12 {
            mean_violations += 1;
        }
        if s.risk_seeking < s.mvar - 1e-12 {
            rs_violations += 1;
        }
        comparisons.extend(report.comparisons.into_iter().filter(|c| c.label.starts_with("layer-cake") && !c.passed));
    }
    comparisons.push(Comparison::new("instances with cov(mvar) > cov(mean)", mean_violations as f64, 0.0, 0.0, Relation::Close));
    comparisons.push(Comparison::new(
        "instances with cov(risk-seeking) < cov(mvar)",
        rs_violations as f64,
        0.0,
        0.0,
        Relation::Close,
    ));
    Ok(CheckReport::from_comparisons("cov", comparisons)
        .with_note(format!("{instances} instances accepted out of {draws} draws"))
        .timed(start))
}

/// Identity against the reward capped at the β-quantile.
pub fn transform_ordering(seed: u64, instances: usize) -> Result<CheckReport> {
    let start = Instant::now();
    let cfg = RiskConfig::default();
    let mut rng = rng(seed, TRANSFORM);
    let mut comparisons = Vec::new();
    for k in 0..instances {
        let (bank, policy, _) = sample_tail_instance(&mut rng, 8, &cfg, 10_000)?;
        let joint = joint_score_reward(&policy, &bank, RewardMode::Fractional, 1 << 16)?;
        let rewards = EmpiricalDistribution::from_weighted(joint.iter().map(|a| (a.reward, a.prob)))?;
        let qb = exact_quantile(&rewards, cfg.beta)?;
        let report = monotone_transform_check(&joint, |r| r, |r| r.min(qb), &cfg)?;
        comparisons.extend(report.comparisons.into_iter().map(|mut c| {
            c.label = format!("instance {k}: {}", c.label);
            c
        }));
    }
    Ok(CheckReport::from_comparisons("transform", comparisons).timed(start))
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    let all = suite == Suite::All;
    if all || suite == Suite::Grad {
        out.push(gradient_canonical()?);
        out.push(gradient_monte_carlo(seed)?);
        out.push(mvar_identity(seed, 1000)?);
    }
    if all || suite == Suite::Entropy {
        out.push(entropy_ratios(seed, 20, &[1e-2, 1e-3, 1e-4])?);
    }
    if all || suite == Suite::Cov {
        out.push(covariance_ordering(seed, 100)?);
    }
    if all || suite == Suite::LayerCake {
        out.push(layer_cake(seed, 1000)?);
    }
    if all || suite == Suite::Transform {
        out.push(transform_ordering(seed, 50)?);
    }
    Ok(riskpo_core::diagnostics::merge_reports(out))
}
