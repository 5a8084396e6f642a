use proptest::prelude::*;

use riskpo_core::envs::{assign_bundles, bundle_scores, collect_rollouts, generate_bank, BundleObjective};
use riskpo_core::risk::grpo_advantages;
use riskpo_core::{streams, AnswerSpace, BankSpec, QuantileTrackerState, RewardMode, RiskConfig};

fn bank_spec(chain: bool, questions: usize) -> BankSpec {
    let space = if chain { AnswerSpace::Chain { vocab: 3, horizon: 3 } } else { AnswerSpace::Bandit { answers: 16 } };
    BankSpec { num_questions: questions, space, ..BankSpec::hard_mix() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bundles_conserve_reward_and_permute(
        seed in any::<u64>(),
        b in 1usize..7,
        g in 1usize..12,
        chain in any::<bool>(),
        fractional in any::<bool>(),
    ) {
        let mode = if fractional { RewardMode::Fractional } else { RewardMode::Binary };
        let bank = generate_bank(&bank_spec(chain, 6), &mut streams::stream(seed, &[streams::BANK])).unwrap();
        let policy = bank.uniform_policy().unwrap();
        let batch = collect_rollouts(&policy, &bank, b, g, mode, seed, 1).unwrap();
        let assignment = assign_bundles(b, g, &mut streams::stream(seed, &[streams::BUNDLES])).unwrap();
        for row in &assignment.permutations {
            let mut sorted = row.clone();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (0..g).collect::<Vec<_>>());
        }
        let cfg = RiskConfig::default();
        let set = bundle_scores(&batch, &assignment, &QuantileTrackerState::new(0.5, 1.5), &cfg, BundleObjective::Mvar).unwrap();
        let by_bundle: f64 = set.scores.iter().sum();
        let by_question: f64 = batch.rewards.iter().flatten().sum();
        if mode == RewardMode::Binary {
            // Integer sums of 0/1 are exact in any order.
            prop_assert_eq!(by_bundle, by_question);
            for &s in &set.scores {
                prop_assert!(s.fract() == 0.0 && (0.0..=b as f64).contains(&s));
            }
        } else {
            prop_assert!((by_bundle - by_question).abs() <= 1e-12 * (1.0 + by_question));
        }
    }

    /// A question whose whole group fails gets zero GRPO advantages, yet any
    /// bundle below q_α carries a strictly negative MVaR advantage.
    #[test]
    fn zero_advantage_escape(
        other in prop::collection::vec(prop::collection::vec(0u8..2, 6), 0..4),
        q_alpha in 0.01f64..2.0,
        width in 0.0f64..2.0,
        omega in 0.0f64..2.0,
        seed in any::<u64>(),
    ) {
        let g = 6;
        let mut rewards = vec![vec![0.0; g]];
        rewards.extend(other.iter().map(|row| row.iter().map(|&r| r as f64).collect::<Vec<_>>()));
        let b = rewards.len();
        prop_assert!(grpo_advantages(&rewards[0]).unwrap().iter().all(|&a| a == 0.0));

        let assignment = assign_bundles(b, g, &mut streams::stream(seed, &[1])).unwrap();
        let scores: Vec<f64> = (0..g).map(|j| (0..b).map(|i| rewards[i][assignment.permutations[i][j]]).sum()).collect();
        let cfg = RiskConfig { omega, ..RiskConfig::default() };
        let trackers = QuantileTrackerState::new(q_alpha, q_alpha + width);
        let adv = riskpo_core::envs::bundle_advantages(&scores, &trackers, &cfg, BundleObjective::Mvar).unwrap();
        for (s, a) in scores.iter().zip(&adv) {
            if *s < q_alpha {
                prop_assert!(*a < 0.0, "score {} advantage {}", s, a);
            }
        }
    }
}
