//! Lever-game construction, its symmetry group, deterministic populations,
//! the closed-form best-response values, and the tabular oracle.

mod common;

use common::brute_j_aht;
use sba_core::env::{expected_return_exact, run_episode, Environment, Policy};
use sba_core::learner::{encode_observation, tabular_br_oracle};
use sba_core::lever::{
    env_id, lever_identity_group, lever_symmetry_group, make_deterministic_population, make_env,
    optimal_br_value, FollowerPolicy, LeverGameConfig, LeverObservation,
};
use sba_core::metrics::{robustness, EvalMode};
use sba_core::population::{PolicyKind, PolicySpec, Population, TableEntry, TablePolicy};
use sba_core::rng::SeedStream;
use sba_core::symmetry::{sample_uniform, validate_symmetry};

fn config() -> LeverGameConfig {
    LeverGameConfig::default()
}

fn det_pop(name: &str, levers: &[usize]) -> Population {
    make_deterministic_population(name, levers, &config()).unwrap()
}

#[test]
fn config_validation() {
    assert!(make_env(LeverGameConfig {
        num_levers: 1,
        num_rounds: 2,
        reward_on_match: 1.0
    })
    .is_err());
    assert!(make_env(LeverGameConfig {
        num_levers: 10,
        num_rounds: 0,
        reward_on_match: 1.0
    })
    .is_err());
    assert_eq!(env_id(&config()), "lever(levers=10,rounds=2,reward=1)");
}

#[test]
fn both_pull_four_scores_two() {
    let env = make_env(config()).unwrap();
    let pair = [
        PolicySpec::constant("a", 4, 10, 2).unwrap(),
        PolicySpec::constant("b", 4, 10, 2).unwrap(),
    ];
    let ep = run_episode(&env, &pair, SeedStream::new(0)).unwrap();
    assert_eq!(ep.undiscounted_return, 2.0);
}

#[test]
fn switching_away_after_matching_scores_one() {
    // Pulls (3,3) then (3,9): one matching round.
    let env = make_env(config()).unwrap();
    let mut entries = vec![TableEntry {
        round: 1,
        partner: None,
        action: 3,
    }];
    for partner in 0..10 {
        entries.push(TableEntry {
            round: 2,
            partner: Some(partner),
            action: 9,
        });
    }
    let switcher = PolicySpec::table("switcher", TablePolicy::new(10, entries).unwrap());
    let stayer = PolicySpec::constant("stayer", 3, 10, 2).unwrap();
    let pair: [&dyn Policy; 2] = [&switcher, &stayer];
    let ep = run_episode(&env, &pair, SeedStream::new(0)).unwrap();
    assert_eq!(ep.rewards, vec![1.0, 0.0]);
    assert_eq!(ep.undiscounted_return, 1.0);
}

#[test]
fn uniform_self_play_return_is_rounds_over_levers() {
    let env = make_env(config()).unwrap();
    let pair = [PolicySpec::uniform("u1", 10), PolicySpec::uniform("u2", 10)];
    let exact = expected_return_exact(&env, &pair).unwrap();
    assert!((exact - 0.2).abs() < 1e-12);
}

#[test]
fn sampled_permutations_are_automorphisms() {
    let env = make_env(config()).unwrap();
    let group = lever_symmetry_group(&config());
    let mut rng = SeedStream::new(1).rng();
    for _ in 0..50 {
        let op = sample_uniform(&group, &mut rng);
        assert!(validate_symmetry(&env, &op, 1e-12).ok);
    }
}

#[test]
fn deterministic_population_matches_paper_sets() {
    let train = det_pop("train", &[0, 1, 2, 3, 4]);
    assert_eq!(train.len(), 5);
    assert_eq!(
        train.members.iter().map(|m| m.name.as_str()).collect::<Vec<_>>(),
        vec!["det-0", "det-1", "det-2", "det-3", "det-4"]
    );
    let eval = det_pop("eval", &(0..10).collect::<Vec<_>>());
    assert_eq!(eval.len(), 10);
    assert!(make_deterministic_population("bad", &[10], &config()).is_err());
}

#[test]
fn deterministic_crossplay_is_two_on_the_diagonal() {
    let env = make_env(config()).unwrap();
    let pop = det_pop("all", &(0..10).collect::<Vec<_>>());
    for (i, a) in pop.members.iter().enumerate() {
        for (j, b) in pop.members.iter().enumerate() {
            let pair: [&dyn Policy; 2] = [a, b];
            let v = expected_return_exact(&env, &pair).unwrap();
            let expected = if i == j { 2.0 } else { 0.0 };
            assert_eq!(v, expected, "pair ({i},{j})");
        }
    }
}

#[test]
fn closed_form_values_match_published_numbers() {
    let train = det_pop("train", &[0, 1, 2, 3, 4]);
    let eval = det_pop("eval", &(0..10).collect::<Vec<_>>());

    let (train_v, eval_v) = optimal_br_value(&train, &eval, false, &config()).unwrap();
    assert!((train_v - 1.2).abs() < 1e-9);
    assert!((eval_v - 0.6).abs() < 1e-9);

    let (train_v, eval_v) = optimal_br_value(&train, &eval, true, &config()).unwrap();
    assert!((train_v - 1.1).abs() < 1e-9);
    assert!((eval_v - 1.1).abs() < 1e-9);

    let full = det_pop("full", &(0..10).collect::<Vec<_>>());
    let (train_v, eval_v) = optimal_br_value(&full, &eval, false, &config()).unwrap();
    assert!((train_v - 1.1).abs() < 1e-9);
    assert!((eval_v - 1.1).abs() < 1e-9);
}

#[test]
fn closed_form_rejects_non_deterministic_members() {
    let mut pop = det_pop("train", &[0, 1]);
    pop.members.push(PolicySpec::uniform("u", 10));
    let eval = det_pop("eval", &[0, 1]);
    assert!(optimal_br_value(&pop, &eval, false, &config()).is_err());
}

#[test]
fn sba_value_ignores_which_levers_the_eval_set_covers() {
    let train = det_pop("train", &[0, 1, 2, 3, 4]);
    for levers in [vec![0], vec![5, 6], vec![0, 3, 7, 9]] {
        let eval = det_pop("eval", &levers);
        let (train_v, eval_v) = optimal_br_value(&train, &eval, true, &config()).unwrap();
        assert!((train_v - 1.1).abs() < 1e-9);
        assert!((eval_v - 1.1).abs() < 1e-9);
    }
}

#[test]
fn oracle_tables_respond_as_derived() {
    let train = det_pop("train", &[0, 1, 2, 3, 4]);

    let plain = tabular_br_oracle(&config(), &train, None).unwrap();
    let PolicyKind::DeterministicTable(table) = &plain.kind else {
        panic!("oracle must be a table");
    };
    for k in 0..5 {
        let hit = table
            .entries
            .iter()
            .find(|e| e.round == 2 && e.partner == Some(k))
            .unwrap();
        assert_eq!(hit.action, k, "learned levers echo back");
    }
    for k in 5..10 {
        let miss = table
            .entries
            .iter()
            .find(|e| e.round == 2 && e.partner == Some(k))
            .unwrap();
        assert_eq!(miss.action, 0, "unseen levers fall back to the round-1 action");
    }

    let group = lever_symmetry_group(&config());
    let sba = tabular_br_oracle(&config(), &train, Some(&group)).unwrap();
    let PolicyKind::DeterministicTable(table) = &sba.kind else {
        panic!("oracle must be a table");
    };
    for k in 0..10 {
        let hit = table
            .entries
            .iter()
            .find(|e| e.round == 2 && e.partner == Some(k))
            .unwrap();
        assert_eq!(hit.action, k, "augmentation exposes every lever");
    }
}

#[test]
fn oracle_robustness_agrees_with_closed_form_to_1e9() {
    let env = make_env(config()).unwrap();
    let train = det_pop("train", &[0, 1, 2, 3, 4]);
    let eval = det_pop("eval", &(0..10).collect::<Vec<_>>());
    let group = lever_symmetry_group(&config());
    let stream = SeedStream::new(0);

    // Two independent routes to the same numbers: measured robustness of
    // the oracle tables vs the closed form.
    let plain = tabular_br_oracle(&config(), &train, None).unwrap();
    let measured_train = robustness(&env, &plain, &train, None, EvalMode::Exact, stream)
        .unwrap()
        .value;
    let measured_eval = robustness(&env, &plain, &eval, None, EvalMode::Exact, stream)
        .unwrap()
        .value;
    let (train_v, eval_v) = optimal_br_value(&train, &eval, false, &config()).unwrap();
    assert!((measured_train - train_v).abs() < 1e-9, "{measured_train} vs {train_v}");
    assert!((measured_eval - eval_v).abs() < 1e-9, "{measured_eval} vs {eval_v}");

    let sba = tabular_br_oracle(&config(), &train, Some(&group)).unwrap();
    let measured_train = robustness(&env, &sba, &train, Some(&group), EvalMode::Exact, stream)
        .unwrap()
        .value;
    let measured_eval = robustness(&env, &sba, &eval, Some(&group), EvalMode::Exact, stream)
        .unwrap()
        .value;
    let (train_v, eval_v) = optimal_br_value(&train, &eval, true, &config()).unwrap();
    assert!((measured_train - train_v).abs() < 1e-9);
    assert!((measured_eval - eval_v).abs() < 1e-9);
}

#[test]
fn closed_form_upper_bounds_measured_robustness_of_other_policies() {
    let env = make_env(config()).unwrap();
    let train = det_pop("train", &[0, 1, 2, 3, 4]);
    let eval = det_pop("eval", &(0..10).collect::<Vec<_>>());
    let (_, bound) = optimal_br_value(&train, &eval, false, &config()).unwrap();
    let stream = SeedStream::new(0);

    // A uniform policy and the wrong deterministic policy must not beat
    // the optimum.
    for policy in [PolicySpec::uniform("u", 10), PolicySpec::constant("d", 7, 10, 2).unwrap()] {
        let v = robustness(&env, &policy, &eval, None, EvalMode::Exact, stream)
            .unwrap()
            .value;
        assert!(v <= bound + 1e-9, "{} scored {v} above bound {bound}", policy.name);
    }
}

#[test]
fn follower_is_equivariant_so_grouped_and_plain_robustness_coincide() {
    let env = make_env(config()).unwrap();
    let eval = det_pop("eval", &(0..10).collect::<Vec<_>>());
    let group = lever_symmetry_group(&config());
    let follower = FollowerPolicy { num_levers: 10 };
    let stream = SeedStream::new(0);
    let plain = robustness(&env, &follower, &eval, None, EvalMode::Exact, stream)
        .unwrap()
        .value;
    let grouped = robustness(&env, &follower, &eval, Some(&group), EvalMode::Exact, stream)
        .unwrap()
        .value;
    assert!((plain - 1.1).abs() < 1e-9);
    assert!((plain - grouped).abs() < 1e-9);
}

#[test]
fn identity_group_robustness_equals_plain() {
    let env = make_env(config()).unwrap();
    let eval = det_pop("eval", &(0..10).collect::<Vec<_>>());
    let group = lever_identity_group(&config());
    let policy = PolicySpec::constant("d3", 3, 10, 2).unwrap();
    let stream = SeedStream::new(0);
    let plain = robustness(&env, &policy, &eval, None, EvalMode::Exact, stream)
        .unwrap()
        .value;
    let grouped = robustness(&env, &policy, &eval, Some(&group), EvalMode::Exact, stream)
        .unwrap()
        .value;
    assert_eq!(plain, grouped);
}

#[test]
fn observation_encodings_are_distinct_over_all_classes() {
    let classes = LeverObservation::enumerate(&config());
    assert_eq!(classes.len(), 11);
    let encodings: Vec<Vec<f64>> = classes
        .iter()
        .map(|obs| encode_observation(obs, 10))
        .collect();
    for e in &encodings {
        assert_eq!(e.len(), 12);
    }
    for i in 0..encodings.len() {
        for j in i + 1..encodings.len() {
            assert_ne!(encodings[i], encodings[j], "classes {i} and {j} collide");
        }
    }
    // Round 1: sentinel slot and round bit set.
    let round1 = &encodings[0];
    assert_eq!(round1[10], 1.0);
    assert_eq!(round1[11], 1.0);
    assert_eq!(round1.iter().sum::<f64>(), 2.0);
    // Round 2 with partner 7: slot 7 only.
    let partner7 = encode_observation(
        &LeverObservation::new(2, Some(7)).unwrap(),
        10,
    );
    assert_eq!(partner7[7], 1.0);
    assert_eq!(partner7[11], 0.0);
    assert_eq!(partner7.iter().sum::<f64>(), 1.0);
}

#[test]
fn lever_observation_enforces_round_one_sentinel() {
    assert!(LeverObservation::new(1, Some(3)).is_err());
    assert!(LeverObservation::new(2, None).is_err());
    assert!(LeverObservation::from_label(1, 3, 10).is_err());
    assert!(LeverObservation::from_label(2, 10, 10).is_err());
    assert!(LeverObservation::from_label(2, 11, 10).is_err());
}

#[test]
fn follower_matches_brute_oracle_in_both_seats() {
    let follower = FollowerPolicy { num_levers: 10 };
    for k in [0, 4, 9] {
        let det = PolicySpec::constant("det", k, 10, 2).unwrap();
        let v = brute_j_aht(&config(), &follower, &det);
        assert!((v - 1.1).abs() < 1e-12);
    }
}

#[test]
fn terminal_states_absorb() {
    let env = make_env(config()).unwrap();
    // A state after the final round self-loops for any action, keeping the
    // dynamics total for the validator.
    let terminal = env.num_states() - 1;
    let dist = env.transition(terminal, &[0, 0]);
    assert_eq!(dist.prob(&terminal), 1.0);
}
