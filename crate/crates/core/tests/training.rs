use proptest::prelude::*;

use riskpo_core::envs::generate_bank;
use riskpo_core::trainer::{iteration, train};
use riskpo_core::{streams, AnswerSpace, BankSpec, Objective, TrainConfig, TrainerState};

fn small_bank(seed: u64, chain: bool) -> riskpo_core::QuestionBank {
    let space = if chain { AnswerSpace::Chain { vocab: 3, horizon: 2 } } else { AnswerSpace::Bandit { answers: 8 } };
    let spec = BankSpec { num_questions: 5, space, ..BankSpec::hard_mix() };
    generate_bank(&spec, &mut streams::stream(seed, &[streams::BANK])).unwrap()
}

fn objective(k: u8) -> Objective {
    [Objective::Riskpo, Objective::Grpo, Objective::RiskSeeking, Objective::Mean][k as usize % 4]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn logged_rows_are_well_formed(seed in any::<u64>(), obj in 0u8..4, inner in 1usize..4, chain in any::<bool>()) {
        let bank = small_bank(seed, chain);
        let cfg = TrainConfig {
            objective: objective(obj),
            iterations: 6,
            inner_epochs: inner,
            bundle_size: 3,
            group_size: 4,
            eval_every: 2,
            eval_samples: 16,
            seed,
            ..TrainConfig::default()
        };
        let log = train(&cfg, &bank, bank.uniform_policy().unwrap()).unwrap();
        prop_assert_eq!(log.iterations.len(), 6);
        for (k, row) in log.iterations.iter().enumerate() {
            prop_assert_eq!(row.iteration, k as u64 + 1);
            prop_assert!((0.0..=1.0).contains(&row.clip_fraction));
            if inner == 1 {
                prop_assert_eq!(row.clip_fraction, 0.0);
            }
            prop_assert_eq!(row.q_alpha.is_some(), cfg.objective.uses_trackers());
            prop_assert!(row.entropy >= 0.0 && row.grad_norm.is_finite());
        }
        let eval_iters: Vec<u64> = log.evals.iter().map(|e| e.iteration).collect();
        prop_assert_eq!(eval_iters, vec![0, 2, 4, 6]);
        for e in &log.evals {
            prop_assert!(e.pass_at_1 <= e.pass_at_8 && e.pass_at_8 <= e.pass_at_16);
        }
    }

    #[test]
    fn trackers_step_once_per_iteration(seed in any::<u64>(), inner in 1usize..5) {
        let bank = small_bank(seed, false);
        let cfg = TrainConfig { iterations: 5, inner_epochs: inner, bundle_size: 3, group_size: 4, seed, ..TrainConfig::default() };
        let mut state = TrainerState::new(bank.uniform_policy().unwrap());
        for k in 1..=5u64 {
            state = iteration(state, &bank, &cfg).unwrap().0;
            prop_assert_eq!(state.iteration, k);
            prop_assert_eq!(state.trackers.unwrap().step, k);
        }
    }
}
