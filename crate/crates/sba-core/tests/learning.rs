//! Training-loop behavior: convergence on simple populations, stream
//! isolation of the augmentation sampler, determinism, the divergence
//! guard, and the greedy export.

mod common;

use sba_core::learner::{
    argmax_tie_lowest, greedy_policy, mlp_greedy_action, tabular_br_oracle, train_best_response,
    ExplorationSchedule, TrainConfig,
};
use sba_core::learner::mlp::MlpParams;
use sba_core::lever::{
    lever_symmetry_group, make_deterministic_population, make_env, LeverGameConfig,
    LeverObservation,
};
use sba_core::metrics::{robustness, EvalMode};
use sba_core::population::{PolicyKind, PolicySpec};
use sba_core::rng::SeedStream;
use sba_core::env::Aoh;

fn small_cfg(seed: u64, epochs: usize, sba: bool) -> TrainConfig {
    TrainConfig {
        epochs,
        sba_enabled: sba,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn singleton_population_converges_to_perfect_coordination() {
    let env = make_env(LeverGameConfig::default()).unwrap();
    let train = make_deterministic_population("train", &[0], env.config()).unwrap();
    let eval = make_deterministic_population("eval", &[0], env.config()).unwrap();
    let cfg = small_cfg(5, 300, false);
    let outcome = train_best_response(&env, &train, None, &cfg, &eval).unwrap();

    let last = outcome.curve.records.last().unwrap();
    assert!((last.train_return - 2.0).abs() < 1e-9, "train {}", last.train_return);

    let PolicyKind::DeterministicTable(table) = &outcome.greedy.kind else {
        panic!("greedy export is a table");
    };
    let response = table
        .entries
        .iter()
        .find(|e| e.round == 2 && e.partner == Some(0))
        .unwrap();
    assert_eq!(response.action, 0, "echoes the observed lever");
}

#[test]
fn disabled_augmentation_with_group_present_changes_nothing() {
    let env = make_env(LeverGameConfig::default()).unwrap();
    let train = make_deterministic_population("train", &[0, 1, 2, 3, 4], env.config()).unwrap();
    let eval = make_deterministic_population("eval", &(0..10).collect::<Vec<_>>(), env.config()).unwrap();
    let group = lever_symmetry_group(env.config());
    let cfg = small_cfg(11, 40, false);
    let with_group = train_best_response(&env, &train, Some(&group), &cfg, &eval).unwrap();
    let without = train_best_response(&env, &train, None, &cfg, &eval).unwrap();
    assert_eq!(with_group.curve, without.curve, "step-for-step identical");
    assert_eq!(with_group.policy, without.policy);
}

#[test]
fn training_is_seed_deterministic() {
    let env = make_env(LeverGameConfig::default()).unwrap();
    let train = make_deterministic_population("train", &[0, 1, 2], env.config()).unwrap();
    let eval = make_deterministic_population("eval", &(0..10).collect::<Vec<_>>(), env.config()).unwrap();
    let group = lever_symmetry_group(env.config());
    let cfg = small_cfg(21, 30, true);
    let a = train_best_response(&env, &train, Some(&group), &cfg, &eval).unwrap();
    let b = train_best_response(&env, &train, Some(&group), &cfg, &eval).unwrap();
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.policy, b.policy);
    let c = train_best_response(
        &env,
        &train,
        Some(&group),
        &small_cfg(22, 30, true),
        &eval,
    )
    .unwrap();
    assert_ne!(a.curve, c.curve, "a different seed explores differently");
}

#[test]
fn sba_requires_a_group() {
    let env = make_env(LeverGameConfig::default()).unwrap();
    let train = make_deterministic_population("train", &[0], env.config()).unwrap();
    let cfg = small_cfg(0, 5, true);
    assert!(train_best_response(&env, &train, None, &cfg, &train).is_err());
}

#[test]
fn divergence_guard_reports_epoch_and_seed() {
    let env = make_env(LeverGameConfig::default()).unwrap();
    let train = make_deterministic_population("train", &[0], env.config()).unwrap();
    let cfg = TrainConfig {
        learning_rate: f64::MAX,
        epochs: 10,
        seed: 3,
        ..TrainConfig::default()
    };
    let err = train_best_response(&env, &train, None, &cfg, &train).unwrap_err();
    match err {
        sba_core::Error::Diverged { seed, .. } => assert_eq!(seed, 3),
        other => panic!("expected divergence, got {other}"),
    }
}

#[test]
fn config_validation_rejects_bad_fields() {
    let bad = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    assert!(bad.validate().is_err());
    let bad = TrainConfig {
        exploration: ExplorationSchedule {
            initial: 1.5,
            final_value: 0.0,
            decay_epochs: None,
        },
        ..TrainConfig::default()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn exploration_schedule_decays_linearly_and_clamps() {
    let s = ExplorationSchedule {
        initial: 0.9,
        final_value: 0.05,
        decay_epochs: Some(100),
    };
    assert_eq!(s.value_at(0, 1000), 0.9);
    assert!((s.value_at(50, 1000) - 0.475).abs() < 1e-12);
    assert!((s.value_at(100, 1000) - 0.05).abs() < 1e-12);
    assert!((s.value_at(999, 1000) - 0.05).abs() < 1e-12);
}

#[test]
fn greedy_ties_break_to_the_lowest_action() {
    assert_eq!(argmax_tie_lowest(&[0.0; 10]), 0);
    let mut v = vec![0.0; 10];
    v[7] = 1.0;
    assert_eq!(argmax_tie_lowest(&v), 7);
    assert_eq!(argmax_tie_lowest(&[1.0, 1.0, 0.5]), 0);
}

#[test]
fn exported_table_reproduces_network_argmax_on_every_class() {
    let config = LeverGameConfig::default();
    let mut rng = SeedStream::new(33).rng();
    let params = MlpParams::init(&[12, 20, 10], &mut rng).unwrap();
    let table_spec = greedy_policy(&params, &config).unwrap();
    let PolicyKind::DeterministicTable(table) = &table_spec.kind else {
        panic!("greedy export is a table");
    };
    assert_eq!(table.entries.len(), 11);
    for obs in LeverObservation::enumerate(&config) {
        let aoh = match obs.partner_previous_action {
            None => Aoh::from_parts(0, vec![10], vec![]).unwrap(),
            Some(k) => Aoh::from_parts(0, vec![10, k], vec![0]).unwrap(),
        };
        let net_action = mlp_greedy_action(&params, &aoh).unwrap();
        let entry = table
            .entries
            .iter()
            .find(|e| e.round == obs.round_index && e.partner == obs.partner_previous_action)
            .unwrap();
        assert_eq!(entry.action, net_action);
    }
}

#[test]
fn reduced_setup_converges_near_the_oracle_with_and_without_augmentation() {
    // A 5-lever shrink of the full experiment, small enough for a unit
    // test: train on 3 levers, evaluate on all 5.
    let config = LeverGameConfig {
        num_levers: 5,
        num_rounds: 2,
        reward_on_match: 1.0,
    };
    let env = make_env(config).unwrap();
    let train = make_deterministic_population("train", &[0, 1, 2], &config).unwrap();
    let eval = make_deterministic_population("eval", &[0, 1, 2, 3, 4], &config).unwrap();
    let group = lever_symmetry_group(&config);

    for sba in [false, true] {
        let cfg = TrainConfig {
            epochs: 400,
            sba_enabled: sba,
            seed: 7,
            ..TrainConfig::default()
        };
        let outcome = train_best_response(&env, &train, Some(&group), &cfg, &eval).unwrap();
        let oracle = tabular_br_oracle(&config, &train, sba.then_some(&group)).unwrap();
        let oracle_value = robustness(
            &env,
            &oracle,
            &eval,
            sba.then_some(&group),
            EvalMode::Exact,
            SeedStream::new(0),
        )
        .unwrap()
        .value;
        let last = outcome.curve.records.last().unwrap();
        assert!(
            (last.eval_return - oracle_value).abs() < 0.05,
            "sba={sba}: final {} vs oracle {oracle_value}",
            last.eval_return
        );
    }
}

#[test]
fn curves_are_recorded_every_epoch_with_monotone_indices() {
    let env = make_env(LeverGameConfig::default()).unwrap();
    let train = make_deterministic_population("train", &[0], env.config()).unwrap();
    let cfg = small_cfg(1, 25, false);
    let outcome = train_best_response(&env, &train, None, &cfg, &train).unwrap();
    assert_eq!(outcome.curve.records.len(), 25);
    for (i, rec) in outcome.curve.records.iter().enumerate() {
        assert_eq!(rec.epoch, i + 1);
        assert!(rec.train_return.is_finite() && rec.eval_return.is_finite());
    }
    assert_eq!(outcome.curve.seed, 1);
}

#[test]
fn trained_policy_spec_round_trips_and_behaves_like_the_table() {
    let env = make_env(LeverGameConfig::default()).unwrap();
    let train = make_deterministic_population("train", &[2], env.config()).unwrap();
    let cfg = small_cfg(2, 200, false);
    let outcome = train_best_response(&env, &train, None, &cfg, &train).unwrap();

    let PolicyKind::Mlp(params) = &outcome.policy.kind else {
        panic!("trained policy is an mlp spec");
    };
    let from_net = greedy_policy(params, env.config()).unwrap();
    let PolicyKind::DeterministicTable(a) = &from_net.kind else {
        panic!()
    };
    let PolicyKind::DeterministicTable(b) = &outcome.greedy.kind else {
        panic!()
    };
    assert_eq!(a, b, "re-exported greedy table matches the trained export");

    let spec = PolicySpec::mlp("roundtrip", params.clone());
    let json = serde_json::to_string(&spec).unwrap();
    let back: PolicySpec = serde_json::from_str(&json).unwrap();
    assert_eq!(back, spec);
}
