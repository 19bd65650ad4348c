//! Policy-level behavior: floors in expectation, the linear baseline's
//! closed form, feedback hygiene, calibration wiring, and allocation
//! feasibility.

mod common;

use banditlp::bayes::Head;
use banditlp::env::{ConstraintTargets, EnvironmentRound, LoggedInteraction};
use banditlp::policies::{Policy, PolicyError, PolicyKind, PolicySpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn hand_round(seed: u64, users: usize, items: usize, dim: usize) -> EnvironmentRound {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = |lo: f64, hi: f64| -> Vec<Vec<f64>> {
        (0..users)
            .map(|_| (0..items).map(|_| rng.random_range(lo..hi)).collect())
            .collect()
    };
    let rewards = table(0.0, 1.0);
    let cost1 = table(0.2, 1.0);
    let cost2 = table(0.2, 1.0);
    let mut ctx = |n: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    };
    let user_contexts = ctx(users);
    let item_contexts = ctx(items);
    EnvironmentRound {
        round: 0,
        user_ids: (0..users).collect(),
        user_contexts,
        item_contexts,
        provider_of: (0..items).map(|i| i * 2 / items).collect(),
        mean_rewards: rewards.clone(),
        mean_cost1: cost1.clone(),
        mean_cost2: cost2.clone(),
        rewards,
        cost1,
        cost2,
    }
}

fn slack_targets(providers: usize) -> ConstraintTargets {
    ConstraintTargets {
        global: f64::INFINITY,
        per_provider_max: vec![f64::INFINITY; providers],
        per_provider_min_send: vec![],
        global_baseline: f64::INFINITY,
        per_provider_send_baseline: vec![0.0; providers],
    }
}

#[test]
fn min_send_floor_is_met_in_expectation() {
    let users = 12;
    let items = 4; // providers: items 0,1 -> 0 and 2,3 -> 1
    let round = hand_round(2024, users, items, 2);
    let floor = 4.0;
    let targets = ConstraintTargets {
        per_provider_min_send: vec![0.0, floor],
        ..slack_targets(2)
    };

    let spec = PolicySpec {
        kind: PolicyKind::Banditlp,
        tau: 0.0,
        hidden_layer_sizes: vec![],
        ..PolicySpec::default()
    };

    let mut sends = Vec::new();
    for seed in 0..50u64 {
        let policy = Policy::new(spec.clone(), 0, seed, 4, Head::Binary, 2).unwrap();
        let decision = policy.select(&round, &targets).unwrap();
        let lp = decision.lp.as_ref().expect("constrained policy runs the program");
        assert!(lp.converged, "seed {seed}: allocation did not converge");

        // The fractional plan itself carries the floor.
        let x = decision.x.as_ref().unwrap();
        let planned: f64 = (0..users).map(|u| x[u][2] + x[u][3]).sum();
        assert!(
            planned >= floor - 1e-3,
            "seed {seed}: planned provider-1 mass {planned} under floor {floor}"
        );

        let count = decision
            .actions
            .iter()
            .flatten()
            .filter(|&&i| i >= 2)
            .count();
        sends.push(count as f64);
    }

    let mean = sends.iter().sum::<f64>() / sends.len() as f64;
    let var = sends.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (sends.len() - 1) as f64;
    let se = (var / sends.len() as f64).sqrt();
    assert!(
        mean >= floor - 2.0 * se - 0.05,
        "realized provider-1 sends {mean} (se {se}) fall short of the floor {floor}"
    );
}

#[test]
fn zero_alpha_linear_policy_recovers_ridge_regression() {
    let dim = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let w = [0.8, -0.5, 0.3];
    let log: Vec<LoggedInteraction> = (0..40)
        .map(|n| {
            let z: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: f64 = z.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()
                + 0.01 * rng.random_range(-1.0..1.0);
            LoggedInteraction {
                user: n,
                item: 0,
                context: z,
                reward: y,
                cost1: 0.5,
                cost2: 0.5,
            }
        })
        .collect();

    let spec = PolicySpec {
        kind: PolicyKind::LinucbLp,
        alpha: 0.0,
        ridge: 1.0,
        ..PolicySpec::default()
    };
    let mut policy = Policy::new(spec, 0, 7, dim, Head::Gaussian, 1).unwrap();
    policy.initialize(&log).unwrap();

    // Closed-form ridge solution on the same data.
    let mut a = vec![vec![0.0; dim]; dim];
    let mut b = vec![0.0; dim];
    for d in 0..dim {
        a[d][d] = 1.0;
    }
    for item in &log {
        for p in 0..dim {
            for q in 0..dim {
                a[p][q] += item.context[p] * item.context[q];
            }
            b[p] += item.context[p] * item.reward;
        }
    }
    let theta = common::solve_dense(a, b).expect("ridge system is positive definite");

    // A round whose joint contexts are exactly the probe vectors: items carry
    // no features of their own.
    let probes: Vec<Vec<f64>> = (0..6)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let round = EnvironmentRound {
        round: 0,
        user_ids: (0..probes.len()).collect(),
        user_contexts: probes.clone(),
        item_contexts: vec![vec![]],
        provider_of: vec![0],
        rewards: vec![vec![0.0]; probes.len()],
        cost1: vec![vec![0.5]; probes.len()],
        cost2: vec![vec![0.5]; probes.len()],
        mean_rewards: vec![vec![0.0]; probes.len()],
        mean_cost1: vec![vec![0.5]; probes.len()],
        mean_cost2: vec![vec![0.5]; probes.len()],
    };
    let decision = policy.select(&round, &slack_targets(1)).unwrap();
    for (u, z) in probes.iter().enumerate() {
        let expected: f64 = z.iter().zip(&theta).map(|(a, b)| a * b).sum();
        let got = decision.reward_estimates[u][0];
        assert!(
            (got - expected).abs() <= 1e-8,
            "probe {u}: policy estimate {got} vs ridge {expected}"
        );
    }
}

#[test]
fn feedback_from_another_policy_is_rejected() {
    let round = hand_round(31, 4, 3, 2);
    let policy_a = Policy::new(
        PolicySpec {
            kind: PolicyKind::Random,
            ..PolicySpec::default()
        },
        0,
        1,
        4,
        Head::Binary,
        1,
    )
    .unwrap();
    let decision = policy_a.select(&round, &slack_targets(2)).unwrap();

    let mut policy_b = Policy::new(
        PolicySpec {
            kind: PolicyKind::Random,
            ..PolicySpec::default()
        },
        3,
        1,
        4,
        Head::Binary,
        1,
    )
    .unwrap();
    let err = policy_b.update(&decision, &round).unwrap_err();
    assert!(
        matches!(err, PolicyError::ForeignFeedback { decision: 0, policy: 3 }),
        "expected a foreign-feedback rejection, got {err:?}"
    );
}

#[test]
fn binary_rewards_get_a_calibrator_after_training() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let log: Vec<LoggedInteraction> = (0..60)
        .map(|n| {
            let z: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p = 1.0 / (1.0 + (-2.0 * z[0]).exp());
            LoggedInteraction {
                user: n,
                item: 0,
                context: z,
                reward: f64::from(rng.random::<f64>() < p),
                cost1: 0.5,
                cost2: 0.5,
            }
        })
        .collect();

    let calibrated_spec = PolicySpec {
        kind: PolicyKind::Banditlp,
        hidden_layer_sizes: vec![4],
        calibrate: true,
        epochs_init: 30,
        ..PolicySpec::default()
    };
    let mut policy = Policy::new(calibrated_spec.clone(), 0, 5, 4, Head::Binary, 1).unwrap();
    assert!(policy.calibrator().is_none(), "no calibrator before any data");
    policy.initialize(&log).unwrap();
    assert!(policy.calibrator().is_some(), "binary head + calibrate should fit one");

    let round = hand_round(77, 6, 2, 2);
    let decision = policy.select(&round, &slack_targets(2)).unwrap();
    for row in &decision.reward_estimates {
        for &v in row {
            assert!((0.0..=1.0).contains(&v), "calibrated scores live in [0,1], got {v}");
        }
    }

    let plain_spec = PolicySpec {
        calibrate: false,
        ..calibrated_spec
    };
    let mut plain = Policy::new(plain_spec, 0, 5, 4, Head::Binary, 1).unwrap();
    plain.initialize(&log).unwrap();
    assert!(plain.calibrator().is_none(), "calibration stays off when disabled");
}

#[test]
fn allocations_respect_caps_boxes_and_budgets() {
    let users = 10;
    let items = 6;
    let cap = 2usize;
    let round = hand_round(99, users, items, 3);
    let targets = ConstraintTargets {
        global: 6.0,
        per_provider_max: vec![4.0, 4.0],
        per_provider_min_send: vec![],
        global_baseline: 6.0,
        per_provider_send_baseline: vec![0.0, 0.0],
    };
    let spec = PolicySpec {
        kind: PolicyKind::Banditlp,
        hidden_layer_sizes: vec![],
        ..PolicySpec::default()
    };
    let policy = Policy::new(spec, 0, 13, 6, Head::Binary, cap).unwrap();
    let decision = policy.select(&round, &targets).unwrap();
    let lp = decision.lp.as_ref().unwrap();
    assert!(lp.converged);

    let x = decision.x.as_ref().unwrap();
    for (u, row) in x.iter().enumerate() {
        let mut total = 0.0;
        for &v in row {
            assert!((-1e-9..=1.0 + 1e-9).contains(&v), "box violated at user {u}");
            total += v;
        }
        assert!(total <= cap as f64 + 1e-6, "cap violated at user {u}: {total}");
    }

    // The plan's estimated spend honors the stated budgets.
    let c1 = decision.cost1_estimates.as_ref().unwrap();
    let planned_global: f64 = (0..users)
        .map(|u| (0..items).map(|i| c1[u][i] * x[u][i]).sum::<f64>())
        .sum();
    assert!(
        planned_global <= targets.global * (1.0 + 1e-4) + 1e-6,
        "planned spend {planned_global} exceeds budget {}",
        targets.global
    );

    for (u, actions) in decision.actions.iter().enumerate() {
        assert!(actions.len() <= cap);
        let mut seen = std::collections::HashSet::new();
        for &i in actions {
            assert!(i < items);
            assert!(seen.insert(i), "duplicate action for user {u}");
        }
    }

    // Selection is a pure function of (policy, round, targets).
    let again = policy.select(&round, &targets).unwrap();
    assert_eq!(decision.actions, again.actions);
    assert_eq!(decision.reward_estimates, again.reward_estimates);
}
