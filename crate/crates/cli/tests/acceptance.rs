//! Acceptance criteria 1 to 11, one PASS/FAIL line each. Exits non-zero if
//! any criterion fails.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use riskpo_cli::checks;
use riskpo_cli::runner::run_experiment;
use riskpo_cli::sweep::{run_sweep, Axis, SweepPlan};
use riskpo_cli::RunConfig;
use riskpo_core::diagnostics::pass_at_k;
use riskpo_core::envs::{bundle_scores, BundleAssignment, BundleObjective};
use riskpo_core::risk::grpo_advantages;
use riskpo_core::trainer::{clipped_bundle_objective, train};
use riskpo_core::{
    streams, Objective, QuantileTrackerState, Response, RiskConfig, RolloutBatch, TabularPolicy,
};

type Outcome = Result<(bool, String), String>;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn report_check(r: riskpo_core::diagnostics::CheckReport, budget_secs: f64, start: Instant) -> Outcome {
    let secs = start.elapsed().as_secs_f64();
    let worst = r
        .comparisons
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{} = {:e}", c.label, c.measured))
        .next()
        .unwrap_or_else(|| format!("{} comparisons hold", r.comparisons.len()));
    let ok = r.passed() && secs < budget_secs;
    Ok((ok, format!("{worst}; {secs:.2}s of {budget_secs}s budget")))
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let r = checks::gradient_canonical().map_err(|e| e.to_string())?;
    let err = r.comparisons.iter().map(|c| c.measured).fold(0.0, f64::max);
    let (ok, detail) = report_check(r, 10.0, start)?;
    Ok((ok, format!("max relative error {err:.2e} (tol 1e-6); {detail}")))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    report_check(checks::mvar_identity(2, 1000).map_err(|e| e.to_string())?, 5.0, start)
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    report_check(checks::layer_cake(3, 1000).map_err(|e| e.to_string())?, 5.0, start)
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    report_check(checks::entropy_ratios(4, 20, &[1e-2, 1e-3, 1e-4]).map_err(|e| e.to_string())?, 10.0, start)
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let r = checks::covariance_ordering(5, 100).map_err(|e| e.to_string())?;
    let notes = r.notes.join("; ");
    let (ok, detail) = report_check(r, 30.0, start)?;
    Ok((ok, format!("{detail}; {notes}")))
}

/// Two questions with G = 4: question 0 answered wrong every time, question
/// 1 right three times. Trackers (0.5, 1.5) put bundle score 0 below q_α.
fn criterion_6() -> Outcome {
    let e = |e: riskpo_core::Error| e.to_string();
    let policy = TabularPolicy::bandit(2, 4).map_err(e)?;
    let rewards = vec![vec![0.0; 4], vec![1.0, 0.0, 1.0, 1.0]];
    let responses: Vec<Vec<Response>> = (0..2).map(|_| (0..4).map(|a| Response::answer(a % 4)).collect()).collect();
    let behavior_log_probs = responses
        .iter()
        .enumerate()
        .map(|(q, row)| row.iter().map(|y| policy.sequence_log_prob(q, y)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(e)?;
    let behavior_token_log_probs = behavior_log_probs.iter().map(|row| row.iter().map(|lp| vec![lp.raw]).collect()).collect();
    let batch = RolloutBatch { question_ids: vec![0, 1], responses, rewards, behavior_log_probs, behavior_token_log_probs };

    let grpo = grpo_advantages(&batch.rewards[0]).map_err(e)?;
    let grpo_zero = grpo.iter().all(|&a| a == 0.0);

    let cfg = RiskConfig::default();
    let assignment = BundleAssignment::identity(2, 4);
    let trackers = QuantileTrackerState::new(0.5, 1.5);
    let set = bundle_scores(&batch, &assignment, &trackers, &cfg, BundleObjective::Mvar).map_err(e)?;
    let below = set.scores.iter().any(|&s| s < trackers.q_alpha);
    let negative = set.advantages.iter().any(|&a| a < 0.0);
    // The wrong answers of question 0 receive a nonzero update.
    let grad = clipped_bundle_objective(&batch, &set, &assignment, &policy, 0.2).map_err(e)?.grad;
    let moved = grad[policy.row_offset(0, 0)..][..4].iter().any(|&g| g != 0.0);
    Ok((
        grpo_zero && below && negative && moved,
        format!("GRPO advantages {grpo:?}; bundle scores {:?}; MVaR advantages {:?}", set.scores, set.advantages),
    ))
}

struct Trio {
    entropy: [Vec<f64>; 3],
    rvar: [Vec<f64>; 3],
    pass16: [Vec<f64>; 3],
    secs: f64,
}

const TRIO: [Objective; 3] = [Objective::Riskpo, Objective::Grpo, Objective::RiskSeeking];

fn hard_mix_runs() -> Result<Trio, String> {
    let start = Instant::now();
    let mut t = Trio { entropy: Default::default(), rvar: Default::default(), pass16: Default::default(), secs: 0.0 };
    for seed in 0..10 {
        for (k, objective) in TRIO.into_iter().enumerate() {
            let mut cfg = RunConfig::default();
            cfg.train.seed = seed;
            cfg.train.objective = objective;
            let bank = cfg.build_bank().map_err(|e| e.to_string())?;
            let initial = cfg.initial_policy(&bank).map_err(|e| e.to_string())?;
            let log = train(&cfg.train, &bank, initial).map_err(|e| e.to_string())?;
            let last = log.iterations.last().ok_or("no iterations")?;
            t.entropy[k].push(last.entropy);
            t.rvar[k].push(last.rvar_lower);
            t.pass16[k].push(log.evals.last().ok_or("no evaluation")?.pass_at_16);
        }
    }
    t.secs = start.elapsed().as_secs_f64();
    Ok(t)
}

fn criterion_7(t: &Trio) -> Outcome {
    let h: Vec<f64> = t.entropy.iter().map(|v| median(v.clone())).collect();
    let r: Vec<f64> = t.rvar.iter().map(|v| median(v.clone())).collect();
    let ok = h[0] > h[1] && h[1] > h[2] && r[0] > r[1] && t.secs < 600.0;
    Ok((
        ok,
        format!(
            "median entropy riskpo {:.4}, grpo {:.4}, risk_seeking {:.4}; median RVaR_0:0.2 riskpo {:.4}, grpo {:.4}; 30 runs in {:.1}s",
            h[0], h[1], h[2], r[0], r[1], t.secs
        ),
    ))
}

fn criterion_8(t: &Trio) -> Outcome {
    let wins = t.pass16[0].iter().zip(&t.pass16[1]).filter(|(r, g)| r >= g).count();
    Ok((
        wins >= 7,
        format!(
            "riskpo pass@16 >= grpo in {wins}/10 seeds (medians {:.4} vs {:.4})",
            median(t.pass16[0].clone()),
            median(t.pass16[1].clone())
        ),
    ))
}

/// Counts k-subsets of n samples (the first c correct) that contain a hit.
fn enumerate_pass_at_k(n: usize, c: usize, k: usize) -> f64 {
    let (mut hit, mut total) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize == k {
            total += 1;
            if mask & ((1u32 << c) - 1) != 0 {
                hit += 1;
            }
        }
    }
    hit as f64 / total as f64
}

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let mut cases = 0;
    let mut mismatches = 0;
    for n in 1..=12 {
        for c in 0..=n {
            for k in 1..=n {
                cases += 1;
                let est = pass_at_k(n, c, k).map_err(|e| e.to_string())?;
                if est.to_bits() != enumerate_pass_at_k(n, c, k).to_bits() {
                    mismatches += 1;
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((mismatches == 0 && secs < 5.0, format!("{mismatches} mismatches over {cases} cases; {secs:.2}s")))
}

/// Left-continuous quantile of Binomial(n, p).
fn binomial_quantile(n: u32, p: f64, u: f64) -> f64 {
    let mut cdf = 0.0;
    let mut pmf = (1.0 - p).powi(n as i32);
    for x in 0..=n {
        cdf += pmf;
        if cdf >= u {
            return x as f64;
        }
        pmf *= (n - x) as f64 / (x + 1) as f64 * p / (1.0 - p);
    }
    n as f64
}

fn criterion_10() -> Outcome {
    let start = Instant::now();
    let cfg = RiskConfig::default();
    let train = riskpo_core::TrainConfig::default();
    let b = train.bundle_size as u32;
    let p = 0.3;
    let (qa, qb) = (binomial_quantile(b, p, cfg.alpha), binomial_quantile(b, p, cfg.beta));
    let tol = 0.05 * b as f64;
    let mut good = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let mut rng: ChaCha8Rng = streams::stream(seed, &[1000]);
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..train.group_size).map(|_| (0..b).filter(|_| rng.random::<f64>() < p).count() as f64).collect()
        };
        let mut tracker = QuantileTrackerState::from_scores(&draw(&mut rng), &cfg).map_err(|e| e.to_string())?;
        for k in 1..=5000 {
            tracker = tracker.update(&draw(&mut rng), train.gamma(k), &cfg).map_err(|e| e.to_string())?;
        }
        let dev = (tracker.q_alpha - qa).abs().max((tracker.q_beta - qb).abs());
        worst = worst.max(dev);
        if dev <= tol {
            good += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        good >= 9 && secs < 5.0,
        format!("{good}/10 seeds within {tol} of ({qa}, {qb}); worst deviation {worst:.4}; {secs:.2}s"),
    ))
}

fn same_bytes(a: &Path, b: &Path) -> Result<bool, String> {
    let read = |p: &Path| fs::read(p).map_err(|e| format!("{}: {e}", p.display()));
    Ok(read(a)? == read(b)?)
}

fn criterion_11() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let e = |e: riskpo_cli::CliError| e.to_string();
    let mut checked = 0;
    let mut differing = Vec::new();
    for objective in TRIO {
        let mut cfg = RunConfig::default();
        cfg.train.objective = objective;
        cfg.train.seed = 7;
        let (a, b) = (root.join(format!("{}-a", objective.as_str())), root.join(format!("{}-b", objective.as_str())));
        run_experiment(&cfg, &a, false, "acceptance").map_err(e)?;
        run_experiment(&cfg, &b, false, "acceptance").map_err(e)?;
        for f in ["metrics.csv", "evals.csv"] {
            checked += 1;
            if !same_bytes(&a.join(f), &b.join(f))? {
                differing.push(format!("{}/{f}", objective.as_str()));
            }
        }
    }
    let plan = SweepPlan {
        base: RunConfig::default(),
        axis: Axis::Objective,
        values: TRIO.iter().map(|o| o.as_str().to_string()).collect(),
        seeds: vec![0, 1],
    };
    let serial = root.join("serial");
    let parallel = root.join("parallel");
    run_sweep(&plan, &serial, false, 1).map_err(e)?;
    run_sweep(&plan, &parallel, false, 4).map_err(e)?;
    let mut files = vec!["summary.csv".to_string(), "entropy_trajectories.csv".to_string()];
    for v in &plan.values {
        for s in &plan.seeds {
            for f in ["metrics.csv", "evals.csv"] {
                files.push(format!("objective={v}/seed{s}/{f}"));
            }
        }
    }
    for f in &files {
        checked += 1;
        if !same_bytes(&serial.join(f), &parallel.join(f))? {
            differing.push(format!("sweep {f}"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((differing.is_empty(), format!("{checked} file pairs compared, differing: {differing:?}; {secs:.1}s")))
}

fn main() -> ExitCode {
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "gradient vs finite differences", criterion_1()),
        (2, "MVaR identity", criterion_2()),
        (3, "layer-cake covariance", criterion_3()),
        (4, "entropy-step residual ratio", criterion_4()),
        (5, "covariance ordering", criterion_5()),
        (6, "zero-advantage escape", criterion_6()),
    ];
    match hard_mix_runs() {
        Ok(t) => {
            results.push((7, "entropy and lower tail on hard mix", criterion_7(&t)));
            results.push((8, "pass@16 wins on hard mix", criterion_8(&t)));
        }
        Err(err) => {
            results.push((7, "entropy and lower tail on hard mix", Err(err.clone())));
            results.push((8, "pass@16 wins on hard mix", Err(err)));
        }
    }
    results.push((9, "pass@k vs enumeration", criterion_9()));
    results.push((10, "quantile tracking", criterion_10()));
    results.push((11, "determinism", criterion_11()));

    let mut failed = 0;
    for (n, name, outcome) in &results {
        let (ok, detail) = match outcome {
            Ok((ok, d)) => (*ok, d.clone()),
            Err(e) => (false, format!("error: {e}")),
        };
        if !ok {
            failed += 1;
        }
        println!("{} criterion {n:>2} ({name}): {detail}", if ok { "PASS" } else { "FAIL" });
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
