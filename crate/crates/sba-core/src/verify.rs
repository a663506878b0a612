//! Executable property suites: return invariance under joint relabeling,
//! the augmentation/inverse-augmentation identity, exhaustive symmetry
//! validation of sampled ops, and the network gradient check. The command
//! line `verify` subcommand and the acceptance tests share these.

use crate::dist::FiniteDist;
use crate::env::{expected_return_exact, ActionId, Aoh, Policy};
use crate::error::{Error, Result};
use crate::learner::mlp::{grad_batch, BatchItem, MlpParams};
use crate::lever::{lever_symmetry_group, make_env, LeverGameConfig, LeverObservation};
use crate::metrics::{j_aht, EvalMode};
use crate::rng::{tags, SeedStream};
use crate::symmetry::{augment_policy, inverse, sample_uniform, validate_symmetry};
use rand::Rng;

/// Outcome of one property suite.
#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: String,
    pub cases: usize,
    pub failures: usize,
    pub max_error: f64,
    pub passed: bool,
    pub detail: String,
}

impl SuiteReport {
    fn new(name: &str, cases: usize, failures: usize, max_error: f64, detail: String) -> Self {
        SuiteReport {
            name: name.to_string(),
            cases,
            failures,
            max_error,
            passed: failures == 0,
            detail,
        }
    }
}

/// A fully stochastic lever-game policy with an arbitrary positive
/// distribution per observation class. Exercises the exact evaluator far
/// harder than deterministic tables do.
#[derive(Debug, Clone)]
pub struct RandomStochasticPolicy {
    num_levers: usize,
    dists: Vec<((usize, Option<ActionId>), Vec<f64>)>,
}

impl RandomStochasticPolicy {
    pub fn sample<R: Rng + ?Sized>(config: &LeverGameConfig, rng: &mut R) -> Self {
        let dists = LeverObservation::enumerate(config)
            .into_iter()
            .map(|obs| {
                let raw: Vec<f64> = (0..config.num_levers)
                    .map(|_| rng.gen_range(0.05..1.0))
                    .collect();
                let total: f64 = raw.iter().sum();
                (
                    (obs.round_index, obs.partner_previous_action),
                    raw.into_iter().map(|p| p / total).collect(),
                )
            })
            .collect();
        RandomStochasticPolicy {
            num_levers: config.num_levers,
            dists,
        }
    }
}

impl Policy for RandomStochasticPolicy {
    fn action_distribution(&self, aoh: &Aoh) -> Result<FiniteDist<ActionId>> {
        let label = aoh.last_observation().ok_or_else(|| {
            Error::Invalid("policy queried on an empty history".to_string())
        })?;
        let obs = LeverObservation::from_label(aoh.round(), label, self.num_levers)?;
        let key = (obs.round_index, obs.partner_previous_action);
        let probs = self
            .dists
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, p)| p)
            .ok_or_else(|| Error::UnsupportedPolicy {
                name: "random-stochastic".to_string(),
                detail: format!("no distribution for class {key:?}"),
            })?;
        FiniteDist::new(
            probs.iter().copied().enumerate().collect(),
            "random stochastic policy",
        )
    }
}

/// Joint relabeling invariance: augmenting every component of a joint
/// policy with the same op leaves the exact expected return unchanged.
pub fn lemma1_suite(config: &LeverGameConfig, cases: usize, seed: u64, tolerance: f64) -> Result<SuiteReport> {
    let env = make_env(*config)?;
    let group = lever_symmetry_group(config);
    let stream = SeedStream::new(seed);
    let mut failures = 0;
    let mut max_err: f64 = 0.0;
    for case in 0..cases {
        let mut rng = stream.child(tags::EPISODE, case as u64).rng();
        let p0 = RandomStochasticPolicy::sample(config, &mut rng);
        let p1 = RandomStochasticPolicy::sample(config, &mut rng);
        let op = sample_uniform(&group, &mut rng);
        let original = expected_return_exact(&env, &[&p0 as &dyn Policy, &p1])?;
        let a0 = augment_policy(&p0, &op);
        let a1 = augment_policy(&p1, &op);
        let augmented = expected_return_exact(&env, &[&a0 as &dyn Policy, &a1])?;
        let err = (original - augmented).abs();
        max_err = max_err.max(err);
        if err >= tolerance {
            failures += 1;
        }
    }
    Ok(SuiteReport::new(
        "return invariance under joint relabeling",
        cases,
        failures,
        max_err,
        format!("max |J(pi) - J(relabeled pi)| = {max_err:.3e}"),
    ))
}

/// Augmenting the AHT policy equals inverse-augmenting the teammate:
/// `j_aht(augment(a, op), b) = j_aht(a, augment(b, inverse(op)))`.
pub fn prop1_suite(config: &LeverGameConfig, cases: usize, seed: u64, tolerance: f64) -> Result<SuiteReport> {
    let env = make_env(*config)?;
    let group = lever_symmetry_group(config);
    let stream = SeedStream::new(seed);
    let mut failures = 0;
    let mut max_err: f64 = 0.0;
    for case in 0..cases {
        let mut rng = stream.child(tags::EPISODE, case as u64).rng();
        let aht = RandomStochasticPolicy::sample(config, &mut rng);
        let teammate = RandomStochasticPolicy::sample(config, &mut rng);
        let op = sample_uniform(&group, &mut rng);
        let lhs_policy = augment_policy(&aht, &op);
        let lhs = j_aht(&env, &lhs_policy, &teammate, EvalMode::Exact, stream)?.value;
        let inv = inverse(&op);
        let rhs_teammate = augment_policy(&teammate, &inv);
        let rhs = j_aht(&env, &aht, &rhs_teammate, EvalMode::Exact, stream)?.value;
        let err = (lhs - rhs).abs();
        max_err = max_err.max(err);
        if err >= tolerance {
            failures += 1;
        }
    }
    Ok(SuiteReport::new(
        "augment-vs-inverse-augment identity",
        cases,
        failures,
        max_err,
        format!("max two-sided gap = {max_err:.3e}"),
    ))
}

/// Every sampled lever permutation must pass the exhaustive automorphism
/// check; a deliberately corrupted (non-bijective) op must be rejected.
pub fn symmetry_suite(config: &LeverGameConfig, draws: usize, seed: u64, tolerance: f64) -> Result<SuiteReport> {
    let env = make_env(*config)?;
    let group = lever_symmetry_group(config);
    let stream = SeedStream::new(seed);
    let mut failures = 0;
    let mut detail = String::new();

    for draw in 0..draws {
        let op = sample_uniform(&group, &mut stream.child(tags::SYMMETRY, draw as u64).rng());
        let report = validate_symmetry(&env, &op, tolerance);
        if !report.ok {
            failures += 1;
            if detail.is_empty() {
                detail = format!("draw {draw} rejected: {:?}", report.violations);
            }
        }
    }

    let identity = group.identity();
    if !validate_symmetry(&env, &identity, tolerance).ok {
        failures += 1;
        detail = "identity op rejected".to_string();
    }

    // Corrupt a valid op so two levers map to the same action label.
    let mut corrupted = group.identity();
    {
        let op = &mut corrupted;
        let mut action_map: Vec<ActionId> = op.action_map(0).to_vec();
        action_map[1] = action_map[0];
        *op = crate::symmetry::SymmetryOp::from_raw_parts(
            op.env_id().to_string(),
            op.state_map().to_vec(),
            vec![action_map, op.action_map(1).to_vec()],
            vec![op.obs_map(0).to_vec(), op.obs_map(1).to_vec()],
        );
    }
    let corrupted_report = validate_symmetry(&env, &corrupted, tolerance);
    if corrupted_report.ok {
        failures += 1;
        detail = "corrupted non-bijective op was accepted".to_string();
    } else if !corrupted_report
        .violations
        .iter()
        .any(|v| v.contains("bijection"))
    {
        failures += 1;
        detail = format!(
            "corrupted op rejected without naming the bijection violation: {:?}",
            corrupted_report.violations
        );
    }

    if detail.is_empty() {
        detail = format!("{draws} sampled ops accepted; corrupted op rejected");
    }
    Ok(SuiteReport::new(
        "symmetry validation",
        draws + 2,
        failures,
        0.0,
        detail,
    ))
}

/// Analytic backprop against central finite differences on random
/// parameters, inputs, and targets. The reported error is the relative
/// L2 gap between the full analytic and numeric gradient vectors.
pub fn gradient_suite(cases: usize, seed: u64, tolerance: f64) -> Result<SuiteReport> {
    const DIM_CHOICES: [[usize; 3]; 4] = [[12, 20, 10], [6, 9, 4], [4, 5, 5], [8, 3, 7]];
    const H: f64 = 1e-5;
    let stream = SeedStream::new(seed);
    let mut failures = 0;
    let mut max_err: f64 = 0.0;

    for case in 0..cases {
        let mut rng = stream.child(tags::INIT, case as u64).rng();
        let dims = DIM_CHOICES[case % DIM_CHOICES.len()];
        let params = MlpParams::init(&dims, &mut rng)?;
        let item = BatchItem {
            x: (0..dims[0]).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            action: rng.gen_range(0..dims[2]),
            target: rng.gen_range(-1.0..2.0),
        };
        let batch = vec![item.clone()];
        let (_, analytic) = grad_batch(&params, &batch)?;
        let analytic = analytic.flatten();

        let mut numeric = Vec::with_capacity(analytic.len());
        let mut probe = params.clone();
        for idx in 0..analytic.len() {
            let theta = probe.get_flat(idx);
            probe.set_flat(idx, theta + H);
            let up = loss_of(&probe, &item)?;
            probe.set_flat(idx, theta - H);
            let down = loss_of(&probe, &item)?;
            probe.set_flat(idx, theta);
            numeric.push((up - down) / (2.0 * H));
        }

        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let gap: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n) * (a - n))
            .sum::<f64>()
            .sqrt();
        let rel = gap / norm(&analytic).max(norm(&numeric)).max(1e-12);
        max_err = max_err.max(rel);
        if rel >= tolerance {
            failures += 1;
        }
    }
    Ok(SuiteReport::new(
        "gradient check",
        cases,
        failures,
        max_err,
        format!("max relative gradient error = {max_err:.3e}"),
    ))
}

fn loss_of(params: &MlpParams, item: &BatchItem) -> Result<f64> {
    let q = params.forward(&item.x)?;
    let err = q[item.action] - item.target;
    Ok(err * err)
}
