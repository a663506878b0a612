//! Group algebra, trajectory/policy actions, sampling, and validation of
//! lever-game symmetry ops.

mod common;

use proptest::prelude::*;
use rand::Rng as _;
use sba_core::env::{expected_return_exact, Aoh, Policy};
use sba_core::lever::{
    lever_symmetry_group, make_env, make_deterministic_population, LeverGameConfig,
    LeverObservation,
};
use sba_core::population::PolicySpec;
use sba_core::rng::SeedStream;
use sba_core::symmetry::{
    apply_to_trajectory, augment_policy, compose, identity, inverse, sample_uniform,
    validate_symmetry, SymmetryOp,
};
use sba_core::verify::RandomStochasticPolicy;

fn config() -> LeverGameConfig {
    LeverGameConfig::default()
}

fn swap_op(a: usize, b: usize) -> SymmetryOp {
    let group = lever_symmetry_group(&config());
    let mut perm: Vec<usize> = (0..10).collect();
    perm.swap(a, b);
    group.lift(&perm).unwrap()
}

/// Every policy-visible history of the 2-round game.
fn all_histories(config: &LeverGameConfig) -> Vec<Aoh> {
    let l = config.num_levers;
    let none = l;
    let mut out = Vec::new();
    for agent in 0..2 {
        out.push(Aoh::from_parts(agent, vec![none], vec![]).unwrap());
        for own in 0..l {
            for partner in 0..l {
                out.push(Aoh::from_parts(agent, vec![none, partner], vec![own]).unwrap());
            }
        }
    }
    out
}

#[test]
fn identity_fixes_every_trajectory() {
    let env = make_env(config()).unwrap();
    let e = identity(&env);
    for aoh in all_histories(&config()) {
        assert_eq!(apply_to_trajectory(&e, &aoh).unwrap(), aoh);
    }
}

#[test]
fn identity_is_neutral_under_composition() {
    let env = make_env(config()).unwrap();
    let e = identity(&env);
    let group = lever_symmetry_group(&config());
    let mut rng = SeedStream::new(1).rng();
    for _ in 0..25 {
        let op = sample_uniform(&group, &mut rng);
        assert_eq!(compose(&e, &op).unwrap(), op);
        assert_eq!(compose(&op, &e).unwrap(), op);
    }
}

#[test]
fn identity_augmentation_leaves_policies_pointwise_unchanged() {
    let env = make_env(config()).unwrap();
    let e = identity(&env);
    let mut rng = SeedStream::new(2).rng();
    let policy = RandomStochasticPolicy::sample(&config(), &mut rng);
    let wrapped = augment_policy(&policy, &e);
    for aoh in all_histories(&config()) {
        let original = policy.action_distribution(&aoh).unwrap();
        let augmented = wrapped.action_distribution(&aoh).unwrap();
        for a in 0..10 {
            assert_eq!(original.prob(&a), augmented.prob(&a));
        }
    }
}

#[test]
fn lever_swap_is_an_involution() {
    let op = swap_op(2, 7);
    let env = make_env(config()).unwrap();
    assert_eq!(compose(&op, &op).unwrap(), identity(&env));
}

#[test]
fn inverse_law_on_samples() {
    let env = make_env(config()).unwrap();
    let group = lever_symmetry_group(&config());
    let mut rng = SeedStream::new(3).rng();
    let e = identity(&env);
    for _ in 0..100 {
        let op = sample_uniform(&group, &mut rng);
        assert_eq!(compose(&inverse(&op), &op).unwrap(), e);
        assert_eq!(compose(&op, &inverse(&op)).unwrap(), e);
    }
}

#[test]
fn cycle_inverse_brute_forced_over_all_labels() {
    let group = lever_symmetry_group(&config());
    // 0 -> 1 -> 2 -> 0, everything else fixed.
    let mut perm: Vec<usize> = (0..10).collect();
    perm[0] = 1;
    perm[1] = 2;
    perm[2] = 0;
    let op = group.lift(&perm).unwrap();
    let inv = inverse(&op);
    for label in 0..10 {
        let expected = match label {
            0 => 2,
            1 => 0,
            2 => 1,
            other => other,
        };
        assert_eq!(inv.map_action(0, label).unwrap(), expected);
        assert_eq!(op.map_action(0, inv.map_action(0, label).unwrap()).unwrap(), label);
        assert_eq!(inv.map_action(0, op.map_action(0, label).unwrap()).unwrap(), label);
    }
}

#[test]
fn trajectory_mapping_matches_hand_application() {
    // (no-partner, pulled 3, saw partner pull 7) under the 3<->7 swap
    // becomes (no-partner, pulled 7, saw partner pull 3).
    let op = swap_op(3, 7);
    let aoh = Aoh::from_parts(0, vec![10, 7], vec![3]).unwrap();
    let mapped = apply_to_trajectory(&op, &aoh).unwrap();
    assert_eq!(mapped.observations(), &[10, 3]);
    assert_eq!(mapped.actions(), &[7]);
}

#[test]
fn trajectory_mapping_round_trips() {
    let group = lever_symmetry_group(&config());
    let mut rng = SeedStream::new(4).rng();
    let histories = all_histories(&config());
    for _ in 0..1000 {
        let op = sample_uniform(&group, &mut rng);
        let inv = inverse(&op);
        let aoh = &histories[rng.gen_range(0..histories.len())];
        let there = apply_to_trajectory(&op, aoh).unwrap();
        let back = apply_to_trajectory(&inv, &there).unwrap();
        assert_eq!(&back, aoh);
    }
}

#[test]
fn trajectory_mapping_rejects_unknown_labels() {
    let op = swap_op(0, 1);
    let aoh = Aoh::from_parts(0, vec![42], vec![]).unwrap();
    assert!(apply_to_trajectory(&op, &aoh).is_err());
}

#[test]
fn augmented_distribution_queries_the_mapped_history() {
    // augmented(a | tau) = inner(op(a) | op(tau)), exactly, everywhere.
    let group = lever_symmetry_group(&config());
    let mut rng = SeedStream::new(5).rng();
    let policy = RandomStochasticPolicy::sample(&config(), &mut rng);
    for _ in 0..50 {
        let op = sample_uniform(&group, &mut rng);
        let wrapped = augment_policy(&policy, &op);
        for aoh in all_histories(&config()) {
            let mapped = apply_to_trajectory(&op, &aoh).unwrap();
            let augmented = wrapped.action_distribution(&aoh).unwrap();
            let inner = policy.action_distribution(&mapped).unwrap();
            for a in 0..10 {
                let lhs = augmented.prob(&a);
                let rhs = inner.prob(&op.map_action(aoh.agent(), a).unwrap());
                assert_eq!(lhs, rhs);
            }
        }
    }
}

#[test]
fn augmented_deterministic_policy_pulls_the_preimage() {
    let group = lever_symmetry_group(&config());
    let mut rng = SeedStream::new(6).rng();
    for _ in 0..50 {
        let op = sample_uniform(&group, &mut rng);
        let lever = rng.gen_range(0..10);
        let det = PolicySpec::constant("det", lever, 10, 2).unwrap();
        let wrapped = augment_policy(&det, &op);
        let inv = inverse(&op);
        let expected = inv.map_action(0, lever).unwrap();
        for aoh in all_histories(&config()) {
            let dist = wrapped.action_distribution(&aoh).unwrap();
            assert_eq!(dist.prob(&expected), 1.0, "constant policies relabel through the inverse");
        }
    }
}

#[test]
fn augmented_self_play_preserves_exact_return() {
    let env = make_env(config()).unwrap();
    let group = lever_symmetry_group(&config());
    let stream = SeedStream::new(7);
    for case in 0..50 {
        let mut rng = stream.child(0, case).rng();
        let p0 = RandomStochasticPolicy::sample(&config(), &mut rng);
        let p1 = RandomStochasticPolicy::sample(&config(), &mut rng);
        let op = sample_uniform(&group, &mut rng);
        let original = expected_return_exact(&env, &[&p0 as &dyn Policy, &p1]).unwrap();
        let a0 = augment_policy(&p0, &op);
        let a1 = augment_policy(&p1, &op);
        let augmented = expected_return_exact(&env, &[&a0 as &dyn Policy, &a1]).unwrap();
        assert!(
            (original - augmented).abs() < 1e-9,
            "case {case}: {original} vs {augmented}"
        );
    }
}

#[test]
fn uniform_sampling_covers_s3_uniformly() {
    let small = LeverGameConfig {
        num_levers: 3,
        num_rounds: 2,
        reward_on_match: 1.0,
    };
    let group = lever_symmetry_group(&small);
    assert_eq!(group.size(), Some(6));
    let elements = group.enumerate(10).unwrap();
    assert_eq!(elements.len(), 6);

    let mut rng = SeedStream::new(8).rng();
    let n = 120_000;
    let mut counts = vec![0usize; 6];
    for _ in 0..n {
        let op = sample_uniform(&group, &mut rng);
        let idx = elements.iter().position(|e| *e == op).unwrap();
        counts[idx] += 1;
    }
    for (i, c) in counts.iter().enumerate() {
        let freq = *c as f64 / n as f64;
        assert!(
            (freq - 1.0 / 6.0).abs() < 0.01,
            "permutation {i} frequency {freq}"
        );
    }
}

#[test]
fn sampling_is_seed_deterministic() {
    let group = lever_symmetry_group(&config());
    let a: Vec<_> = {
        let mut rng = SeedStream::new(9).rng();
        (0..20).map(|_| sample_uniform(&group, &mut rng)).collect()
    };
    let b: Vec<_> = {
        let mut rng = SeedStream::new(9).rng();
        (0..20).map(|_| sample_uniform(&group, &mut rng)).collect()
    };
    assert_eq!(a, b);
}

#[test]
fn sampled_ops_validate_and_fix_the_sentinel() {
    let env = make_env(config()).unwrap();
    let group = lever_symmetry_group(&config());
    let mut rng = SeedStream::new(10).rng();
    for _ in 0..100 {
        let op = sample_uniform(&group, &mut rng);
        assert!(validate_symmetry(&env, &op, 1e-12).ok);
        for agent in 0..2 {
            assert_eq!(op.map_obs(agent, 10).unwrap(), 10);
        }
        // Membership is closed under inverse.
        assert!(validate_symmetry(&env, &inverse(&op), 1e-12).ok);
    }
}

#[test]
fn corrupted_op_is_rejected_for_bijection_violation() {
    let env = make_env(config()).unwrap();
    let e = identity(&env);
    let mut action_map = e.action_map(0).to_vec();
    action_map[1] = action_map[0];
    let corrupted = SymmetryOp::from_raw_parts(
        e.env_id().to_string(),
        e.state_map().to_vec(),
        vec![action_map, e.action_map(1).to_vec()],
        vec![e.obs_map(0).to_vec(), e.obs_map(1).to_vec()],
    );
    let report = validate_symmetry(&env, &corrupted, 1e-12);
    assert!(!report.ok);
    assert!(report.violations.iter().any(|v| v.contains("bijection")));
}

#[test]
fn compose_rejects_mismatched_environments() {
    let big = lever_symmetry_group(&config());
    let small = lever_symmetry_group(&LeverGameConfig {
        num_levers: 3,
        num_rounds: 2,
        reward_on_match: 1.0,
    });
    let err = compose(&big.identity(), &small.identity()).unwrap_err();
    assert!(matches!(err, sba_core::Error::EnvMismatch { .. }));
}

#[test]
fn op_record_round_trips_bit_exactly() {
    let group = lever_symmetry_group(&config());
    let mut rng = SeedStream::new(11).rng();
    for _ in 0..20 {
        let op = sample_uniform(&group, &mut rng);
        let text = op.to_record();
        let parsed = SymmetryOp::from_record(&text).unwrap();
        assert_eq!(parsed, op);
        assert_eq!(parsed.to_record(), text);
    }
    assert!(SymmetryOp::from_record("state_map: [0]").is_err());
    assert!(SymmetryOp::from_record("env_id: x\nstate_map: [0,0]").is_err());
}

#[test]
fn augmentation_washes_out_which_member_of_the_population() {
    // Against an augmented deterministic teammate the member identity no
    // longer matters: the op's inverse relabels every lever uniformly.
    let pop = make_deterministic_population("eval", &(0..10).collect::<Vec<_>>(), &config()).unwrap();
    let op = swap_op(0, 9);
    let d0 = augment_policy(&pop.members[0], &op).action_distribution(
        &Aoh::from_parts(1, vec![10], vec![]).unwrap(),
    );
    assert_eq!(d0.unwrap().prob(&9), 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn composition_is_associative(seed in 0u64..1_000_000) {
        let group = lever_symmetry_group(&config());
        let mut rng = SeedStream::new(seed).rng();
        let a = sample_uniform(&group, &mut rng);
        let b = sample_uniform(&group, &mut rng);
        let c = sample_uniform(&group, &mut rng);
        let left = compose(&compose(&a, &b).unwrap(), &c).unwrap();
        let right = compose(&a, &compose(&b, &c).unwrap()).unwrap();
        prop_assert_eq!(left, right);
    }

    #[test]
    fn sampled_ops_satisfy_group_laws(seed in 0u64..1_000_000) {
        let env = make_env(config()).unwrap();
        let group = lever_symmetry_group(&config());
        let mut rng = SeedStream::new(seed).rng();
        let op = sample_uniform(&group, &mut rng);
        let e = identity(&env);
        prop_assert_eq!(compose(&op, &inverse(&op)).unwrap(), e.clone());
        prop_assert_eq!(compose(&e, &op).unwrap(), op);
    }

    #[test]
    fn observation_classes_decode_uniquely(round in 1usize..=2, label in 0usize..=10) {
        prop_assume!((round == 1) == (label == 10));
        let obs = LeverObservation::from_label(round, label, 10).unwrap();
        prop_assert_eq!(obs.label(&config()), label);
        prop_assert_eq!(obs.round_index, round);
    }
}
