//! Synthetic and replay environment behavior: target self-calibration,
//! logged-data ingestion, imputation, and round determinism.

mod common;

use banditlp::env::replay::{
    impute_reward_matrix, top_ctr_items, LoggedDataset, ReplayConfig, ReplayEnv,
};
use banditlp::env::synthetic::{SyntheticConfig, SyntheticEnv};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_synthetic(global_multiplier: f64, provider_multiplier: f64) -> SyntheticEnv {
    SyntheticEnv::new(SyntheticConfig {
        num_users: 60,
        num_items: 20,
        num_providers: 4,
        user_dim: 4,
        item_dim: 4,
        user_cap: 2,
        calibration_users: 20_000,
        global_multiplier,
        provider_multiplier,
        seed: 42,
        ..SyntheticConfig::default()
    })
    .unwrap()
}

/// Writes a log where item i's click-through rate is exactly i/10, with a
/// hole pattern so half the (user, item) pairs are unobserved.
/// Returns (csv path, temp dir guard).
fn holey_log(dir: &tempfile::TempDir) -> std::path::PathBuf {
    let path = dir.path().join("log.csv");
    let mut out = String::from("user_id,item_id,f0,f1,reward\n");
    for i in 0..10usize {
        for u in 0..20usize {
            if (u + i) % 2 == 1 {
                continue;
            }
            let reward = u8::from(u < 2 * i);
            let f0 = u as f64 / 20.0;
            let f1 = 1.0 - f0;
            out.push_str(&format!("{u},{i},{f0},{f1},{reward}\n"));
        }
    }
    std::fs::write(&path, out).unwrap();
    path
}

/// A complete log (no holes) with the same exact CTR pattern.
fn full_log(dir: &tempfile::TempDir) -> std::path::PathBuf {
    let path = dir.path().join("full.csv");
    let mut out = String::from("user_id,item_id,f0,f1,reward\n");
    for i in 0..10usize {
        for u in 0..20usize {
            let reward = u8::from(u < 2 * i);
            let f0 = u as f64 / 20.0;
            let f1 = 1.0 - f0;
            out.push_str(&format!("{u},{i},{f0},{f1},{reward}\n"));
        }
    }
    std::fs::write(&path, out).unwrap();
    path
}

#[test]
fn random_policy_matches_self_calibrated_targets() {
    // With unit multipliers the target IS the random-policy level, so a
    // uniform policy's mean violation must sit at zero.
    let env = small_synthetic(1.0, 1.0);
    let targets = env.compute_constraint_targets();
    assert_eq!(targets.global, targets.global_baseline);

    let mut rng = ChaCha8Rng::seed_from_u64(777);
    let rounds = 30;
    let mut totals = Vec::with_capacity(rounds);
    for t in 0..rounds {
        let round = env.gen_round(t);
        let mut total = 0.0;
        for u in 0..round.num_round_users() {
            let picks = rand::seq::index::sample(&mut rng, round.num_items(), 2);
            for i in picks.iter() {
                total += round.cost1[u][i];
            }
        }
        totals.push(total);
    }
    let mean = totals.iter().sum::<f64>() / rounds as f64;
    let rel = (mean - targets.global).abs() / targets.global;
    assert!(
        rel <= 0.02,
        "random policy spend {mean} vs self-calibrated target {} (rel {rel})",
        targets.global
    );

    // A tightened budget (multiplier 0.8) must sit well below that level.
    let tight = small_synthetic(0.8, 1.5).compute_constraint_targets();
    assert_eq!(tight.global, 0.8 * tight.global_baseline);
    assert_eq!(tight.global_baseline, targets.global_baseline);
    assert!(
        mean > 1.2 * tight.global,
        "uniform spend {mean} should overshoot the tightened target {}",
        tight.global
    );
    assert_eq!(tight.per_provider_max.len(), 4);
}

#[test]
fn logged_csv_roundtrips_with_exact_ctrs() {
    let dir = tempfile::tempdir().unwrap();
    let path = full_log(&dir);
    let ds = LoggedDataset::from_csv(&path).unwrap();
    assert_eq!(ds.num_users(), 20);
    assert_eq!(ds.num_items, 10);

    let ctrs = ds.item_ctrs();
    for (i, ctr) in ctrs.iter().enumerate() {
        let expected = i as f64 / 10.0;
        assert!(
            (ctr.unwrap() - expected).abs() < 1e-12,
            "item {i}: ctr {ctr:?} expected {expected}"
        );
    }

    let mut top = top_ctr_items(&ds, 0.3);
    top.sort_unstable();
    assert_eq!(top, vec![7, 8, 9]);

    let sub = ds.subsample_users(8, 1);
    assert_eq!(sub.num_users(), 8);
}

#[test]
fn imputation_completes_the_matrix_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let path = holey_log(&dir);
    let ds = LoggedDataset::from_csv(&path).unwrap();

    let (matrix, report) = impute_reward_matrix(&ds, 3, 9).unwrap();
    assert_eq!(matrix.len(), 20);
    assert!(matrix.iter().all(|row| row.len() == 10));
    for row in &matrix {
        for &v in row {
            assert!(v == 0.0 || v == 1.0, "binary rewards expected, got {v}");
        }
    }
    assert_eq!(report.observed_cells + report.imputed_cells, 200);
    assert_eq!(report.observed_cells, 100, "hole pattern removes half the pairs");

    let (again, _) = impute_reward_matrix(&ds, 3, 9).unwrap();
    assert_eq!(matrix, again, "keyed imputation draws must reproduce");
}

#[test]
fn replay_rounds_are_deterministic_and_restricted_to_eligible_items() {
    let dir = tempfile::tempdir().unwrap();
    let path = holey_log(&dir);
    let config = ReplayConfig {
        knn_k: 3,
        users_per_round: Some(8),
        user_cap: 2,
        num_providers: 2,
        top_fraction: 0.3,
        calibration_users: 2_000,
        seed: 11,
        ..ReplayConfig::default()
    };
    let env = ReplayEnv::from_csv(&path, config).unwrap();

    {
        let snap = env.snapshot();
        assert_eq!(snap.eligible_items.len(), 3, "top 30% of ten items");
        let mut eligible = snap.eligible_items.to_vec();
        eligible.sort_unstable();
        assert_eq!(eligible, vec![7, 8, 9]);
    }

    let round = env.gen_round(5);
    assert_eq!(round.num_round_users(), 8);
    assert_eq!(round.num_items(), 10);
    assert!(round.user_ids.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(
        round.rewards, round.mean_rewards,
        "the imputed matrix is its own oracle"
    );
    for (i, ctx) in round.item_contexts.iter().enumerate() {
        assert_eq!(ctx.len(), 10);
        for (j, &v) in ctx.iter().enumerate() {
            assert_eq!(v, f64::from(j == i), "item context must be one-hot");
        }
    }

    let again = env.gen_round(5);
    assert_eq!(round.user_ids, again.user_ids);
    assert_eq!(round.cost1, again.cost1);
    let other = env.gen_round(6);
    assert_ne!(round.user_ids, other.user_ids, "rounds draw fresh user samples");

    let log = env.biased_logging_data(2).unwrap();
    assert!(!log.is_empty());
    let eligible: std::collections::HashSet<usize> =
        env.snapshot().eligible_items.iter().copied().collect();
    for entry in &log {
        assert!(
            eligible.contains(&entry.item),
            "biased logger touched ineligible item {}",
            entry.item
        );
        assert!(entry.reward == 0.0 || entry.reward == 1.0);
    }

    let targets = env.compute_constraint_targets();
    assert_eq!(targets.per_provider_max.len(), 2);
    assert!((targets.global - 0.8 * targets.global_baseline).abs() < 1e-12);
    let total_sends: f64 = targets.per_provider_send_baseline.iter().sum();
    assert!(
        (total_sends - 16.0).abs() < 1e-9,
        "uniform policy sends cap x round-population = 16, got {total_sends}"
    );
}

#[test]
fn synthetic_rounds_reproduce_and_vary_across_time() {
    let env = small_synthetic(0.8, 1.5);
    let a = env.gen_round(3);
    let b = env.gen_round(3);
    assert_eq!(a.rewards, b.rewards);
    assert_eq!(a.user_contexts, b.user_contexts);

    let c = env.gen_round(4);
    assert_ne!(a.user_contexts, c.user_contexts, "user contexts resample per round");

    // Realized tables scatter around the stated means with the configured
    // noise, so their gap must be zero-mean and bounded.
    let mut gap_sum = 0.0;
    let mut n = 0.0;
    for u in 0..a.num_round_users() {
        for i in 0..a.num_items() {
            gap_sum += a.cost1[u][i] - a.mean_cost1[u][i];
            n += 1.0;
        }
    }
    let mean_gap = gap_sum / n;
    assert!(
        mean_gap.abs() < 0.05,
        "realization noise should be centered, got mean gap {mean_gap}"
    );

    // Contexts drive the scores: the same item ranks differently for
    // different users somewhere in the round.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let i = rng.random_range(0..a.num_items());
    let col: Vec<f64> = (0..a.num_round_users()).map(|u| a.mean_rewards[u][i]).collect();
    let spread = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - col.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(spread > 1e-6, "item means must vary across users");
}
