//! Evaluation metrics: seat-averaged AHT return, robustness against a
//! population (optionally with augmented teammates), crossplay,
//! augmentation difference and impact, and a paired sign-flip permutation
//! test.
//!
//! Every metric runs in one of two modes. Exact mode enumerates the
//! episode tree (and handles the op expectation analytically where a group
//! is supplied); Monte Carlo mode samples episodes — and an op per episode
//! where a group is supplied — and reports a standard error. Population
//! expectations are always enumerated exhaustively over members; only ops
//! and episodes are ever sampled.

use crate::dist::mean_and_stderr;
use crate::env::{expected_return_exact, run_episode, Environment, Policy};
use crate::error::{Error, Result};
use crate::population::{PolicyKind, Population, PolicySpec};
use crate::rng::{tags, SeedStream};
use crate::symmetry::{augment_policy, sample_uniform, GroupKind, SymmetryGroup, SymmetryOp};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Evaluation mode. `episodes` counts rollouts per evaluation unit (per
/// seat for pairwise metrics, per member and seat for robustness).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EvalMode {
    Exact,
    MonteCarlo { episodes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportMode {
    Exact,
    MonteCarlo,
}

/// A metric value with its sampling pedigree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub value: f64,
    /// Absent in exact mode.
    pub stderr: Option<f64>,
    /// Absent in exact mode; at least 2 otherwise.
    pub sample_count: Option<usize>,
    pub mode: ReportMode,
}

impl MetricReport {
    pub fn exact(value: f64) -> Self {
        MetricReport {
            value,
            stderr: None,
            sample_count: None,
            mode: ReportMode::Exact,
        }
    }

    pub fn monte_carlo(value: f64, stderr: f64, sample_count: usize) -> Self {
        debug_assert!(sample_count >= 2);
        MetricReport {
            value,
            stderr: Some(stderr),
            sample_count: Some(sample_count),
            mode: ReportMode::MonteCarlo,
        }
    }
}

fn require_two_agents<E: Environment + ?Sized>(env: &E) -> Result<()> {
    if env.num_agents() != 2 {
        return Err(Error::Invalid(format!(
            "metric defined for 2-agent environments, this one has {}",
            env.num_agents()
        )));
    }
    Ok(())
}

fn check_group_binding<E: Environment + ?Sized>(env: &E, group: &SymmetryGroup) -> Result<()> {
    if group.env_id() != env.id() {
        return Err(Error::EnvMismatch {
            left: group.env_id().to_string(),
            right: env.id(),
        });
    }
    if let GroupKind::FullPermutations { num_labels } = group.kind() {
        for agent in 0..env.num_agents() {
            if env.num_actions(agent) != *num_labels {
                return Err(Error::Dimension(format!(
                    "group permutes {num_labels} labels but agent {agent} has {} actions",
                    env.num_actions(agent)
                )));
            }
        }
    }
    Ok(())
}

fn j_pair_exact<E: Environment + ?Sized>(
    env: &E,
    first: &dyn Policy,
    second: &dyn Policy,
) -> Result<f64> {
    let pair: [&dyn Policy; 2] = [first, second];
    expected_return_exact(env, &pair)
}

fn seat_samples<E: Environment + ?Sized>(
    env: &E,
    first: &dyn Policy,
    second: &dyn Policy,
    episodes: usize,
    stream: SeedStream,
) -> Result<Vec<f64>> {
    let pair: [&dyn Policy; 2] = [first, second];
    (0..episodes)
        .map(|i| {
            run_episode(env, &pair, stream.child(tags::EPISODE, i as u64))
                .map(|ep| ep.discounted_return)
        })
        .collect()
}

/// Average expected return of `aht` paired with `teammate`, over both seat
/// assignments.
pub fn j_aht<E: Environment + ?Sized>(
    env: &E,
    aht: &dyn Policy,
    teammate: &dyn Policy,
    mode: EvalMode,
    stream: SeedStream,
) -> Result<MetricReport> {
    require_two_agents(env)?;
    match mode {
        EvalMode::Exact => {
            let a = j_pair_exact(env, aht, teammate)?;
            let b = j_pair_exact(env, teammate, aht)?;
            Ok(MetricReport::exact(0.5 * (a + b)))
        }
        EvalMode::MonteCarlo { episodes } => {
            if episodes < 2 {
                return Err(Error::Invalid(
                    "Monte Carlo mode needs at least 2 episodes".to_string(),
                ));
            }
            let seat0 = seat_samples(env, aht, teammate, episodes, stream.child(tags::METRIC, 0))?;
            let seat1 = seat_samples(env, teammate, aht, episodes, stream.child(tags::METRIC, 1))?;
            let (m0, s0) = mean_and_stderr(&seat0);
            let (m1, s1) = mean_and_stderr(&seat1);
            Ok(MetricReport::monte_carlo(
                0.5 * (m0 + m1),
                0.5 * (s0 * s0 + s1 * s1).sqrt(),
                2 * episodes,
            ))
        }
    }
}

/// Crossplay score: the seat-averaged expected return of a pair, same
/// computation as [`j_aht`].
pub fn crossplay<E: Environment + ?Sized>(
    env: &E,
    a: &dyn Policy,
    b: &dyn Policy,
    mode: EvalMode,
    stream: SeedStream,
) -> Result<MetricReport> {
    j_aht(env, a, b, mode, stream)
}

/// Expected [`j_aht`] against one teammate with the AHT policy wrapped by
/// a uniformly drawn op, computed analytically. Exact augmented evaluation
/// flips the op onto the teammate (the two sides are equal pointwise), so
/// a deterministic teammate's lever becomes uniform over the label block
/// and a uniform-random teammate is unchanged. Anything else has no
/// analytic form here and asks for Monte Carlo mode.
fn phi_averaged_j_aht_exact<E: Environment + ?Sized>(
    env: &E,
    aht: &dyn Policy,
    member: &PolicySpec,
    group: &SymmetryGroup,
    det_collapse: &mut Option<f64>,
) -> Result<f64> {
    match group.kind() {
        GroupKind::IdentityOnly { .. } => Ok(j_aht(env, aht, member, EvalMode::Exact, SeedStream::new(0))?.value),
        GroupKind::FullPermutations { num_labels } => {
            if member.as_constant_action().is_some() {
                if det_collapse.is_none() {
                    let l = *num_labels;
                    let mut total = 0.0;
                    for m in 0..l {
                        let det = PolicySpec::constant(
                            format!("phi-image-{m}"),
                            m,
                            env.num_actions(0),
                            env.horizon(),
                        )?;
                        total += j_aht(env, aht, &det, EvalMode::Exact, SeedStream::new(0))?.value;
                    }
                    *det_collapse = Some(total / l as f64);
                }
                Ok(det_collapse.expect("just computed"))
            } else if matches!(member.kind, PolicyKind::UniformRandom { .. }) {
                // A relabeled uniform policy is the same uniform policy.
                Ok(j_aht(env, aht, member, EvalMode::Exact, SeedStream::new(0))?.value)
            } else {
                Err(Error::UnsupportedPolicy {
                    name: member.name.clone(),
                    detail: "exact augmented evaluation needs deterministic-lever or uniform teammates; use Monte Carlo mode".to_string(),
                })
            }
        }
    }
}

/// Robustness: expected [`j_aht`] over the evaluation population
/// (enumerated exhaustively). With `group`, the AHT policy is additionally
/// wrapped by a uniformly drawn op — analytically in exact mode, sampled
/// per episode in Monte Carlo mode.
pub fn robustness<E: Environment + ?Sized>(
    env: &E,
    aht: &dyn Policy,
    eval_pop: &Population,
    group: Option<&SymmetryGroup>,
    mode: EvalMode,
    stream: SeedStream,
) -> Result<MetricReport> {
    require_two_agents(env)?;
    eval_pop.validate()?;
    if let Some(g) = group {
        check_group_binding(env, g)?;
    }
    let members = &eval_pop.members;
    match mode {
        EvalMode::Exact => {
            let mut det_collapse = None;
            let mut total = 0.0;
            for member in members {
                total += match group {
                    None => j_aht(env, aht, member, EvalMode::Exact, stream)?.value,
                    Some(g) => phi_averaged_j_aht_exact(env, aht, member, g, &mut det_collapse)?,
                };
            }
            Ok(MetricReport::exact(total / members.len() as f64))
        }
        EvalMode::MonteCarlo { episodes } => {
            if episodes < 2 {
                return Err(Error::Invalid(
                    "Monte Carlo mode needs at least 2 episodes".to_string(),
                ));
            }
            let mut mean_sum = 0.0;
            let mut var_sum = 0.0;
            let mut count = 0;
            for (mi, member) in members.iter().enumerate() {
                let mut seat_means = [0.0; 2];
                let mut seat_errs = [0.0; 2];
                for seat in 0..2 {
                    let unit = (mi * 2 + seat) as u64;
                    let unit_stream = stream.child(tags::METRIC, unit);
                    let samples: Vec<f64> = (0..episodes)
                        .map(|e| {
                            let ep_stream = unit_stream.child(tags::EPISODE, e as u64);
                            let ret = match group {
                                None => {
                                    let pair: [&dyn Policy; 2] = if seat == 0 {
                                        [aht, member]
                                    } else {
                                        [member, aht]
                                    };
                                    run_episode(env, &pair, ep_stream)?
                                }
                                Some(g) => {
                                    let op = sample_uniform(
                                        g,
                                        &mut unit_stream.child(tags::SYMMETRY, e as u64).rng(),
                                    );
                                    let wrapped = augment_policy(aht, &op);
                                    let pair: [&dyn Policy; 2] = if seat == 0 {
                                        [&wrapped, member]
                                    } else {
                                        [member, &wrapped]
                                    };
                                    run_episode(env, &pair, ep_stream)?
                                }
                            };
                            Ok(ret.discounted_return)
                        })
                        .collect::<Result<_>>()?;
                    let (m, s) = mean_and_stderr(&samples);
                    seat_means[seat] = m;
                    seat_errs[seat] = s;
                    count += episodes;
                }
                mean_sum += 0.5 * (seat_means[0] + seat_means[1]);
                var_sum +=
                    0.25 * (seat_errs[0] * seat_errs[0] + seat_errs[1] * seat_errs[1]);
            }
            let m = members.len() as f64;
            Ok(MetricReport::monte_carlo(
                mean_sum / m,
                var_sum.sqrt() / m,
                count,
            ))
        }
    }
}

/// Signed crossplay change from augmenting the first policy:
/// `J_XP(a, b) - J_XP(augment(a, op), b)`.
pub fn augmentation_difference<E: Environment + ?Sized>(
    env: &E,
    a: &dyn Policy,
    b: &dyn Policy,
    op: &SymmetryOp,
    mode: EvalMode,
    stream: SeedStream,
) -> Result<MetricReport> {
    let augmented = augment_policy(a, op);
    let base = crossplay(env, a, b, mode, stream.child(tags::METRIC, 0))?;
    let aug = crossplay(env, &augmented, b, mode, stream.child(tags::METRIC, 1))?;
    match mode {
        EvalMode::Exact => Ok(MetricReport::exact(base.value - aug.value)),
        EvalMode::MonteCarlo { .. } => {
            let se_b = base.stderr.expect("mc stderr");
            let se_a = aug.stderr.expect("mc stderr");
            Ok(MetricReport::monte_carlo(
                base.value - aug.value,
                (se_b * se_b + se_a * se_a).sqrt(),
                base.sample_count.unwrap_or(0) + aug.sample_count.unwrap_or(0),
            ))
        }
    }
}

/// Sampling counts for [`augmentation_impact`] in Monte Carlo mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugImpBudget {
    /// Ops sampled per ordered policy pair.
    pub phi_samples: usize,
    /// Episodes per crossplay estimate; `None` evaluates each sampled op's
    /// crossplay exactly.
    pub xp_episodes: Option<usize>,
}

impl Default for AugImpBudget {
    fn default() -> Self {
        AugImpBudget {
            phi_samples: 100,
            xp_episodes: None,
        }
    }
}

/// One crossplay comparison in an augmentation-impact computation.
#[derive(Debug, Clone, Serialize)]
pub struct AugImpRow {
    pub policy_i: String,
    pub policy_j: String,
    /// Sample index, or "analytic"/"enumerated" in exact mode.
    pub phi_id: String,
    pub xp_base: f64,
    pub xp_aug: f64,
    pub abs_diff: f64,
}

/// Group orders up to this bound are enumerated outright for exact-mode
/// pairs with no analytic shortcut.
const ENUMERATION_LIMIT: usize = 5040;

/// Expected absolute crossplay change over uniform (policy, policy, op)
/// triples. Ordered pairs — including a policy with itself — are
/// enumerated exhaustively; the op expectation is analytic in exact mode
/// and sampled `budget.phi_samples` times per pair otherwise.
pub fn augmentation_impact<E: Environment + ?Sized>(
    env: &E,
    pop: &Population,
    group: &SymmetryGroup,
    mode: EvalMode,
    budget: &AugImpBudget,
    stream: SeedStream,
) -> Result<MetricReport> {
    Ok(augmentation_impact_report(env, pop, group, mode, budget, stream, false)?.1)
}

/// Like [`augmentation_impact`], optionally collecting per-comparison rows.
#[allow(clippy::too_many_arguments)]
pub fn augmentation_impact_report<E: Environment + ?Sized>(
    env: &E,
    pop: &Population,
    group: &SymmetryGroup,
    mode: EvalMode,
    budget: &AugImpBudget,
    stream: SeedStream,
    collect_rows: bool,
) -> Result<(Vec<AugImpRow>, MetricReport)> {
    require_two_agents(env)?;
    pop.validate()?;
    check_group_binding(env, group)?;
    let members = &pop.members;
    let m = members.len();
    let mut rows = Vec::new();

    match mode {
        EvalMode::Exact => {
            let mut total = 0.0;
            // Per-second-policy cache of crossplay against every possible
            // image of a deterministic first policy.
            let mut det_values: Vec<Option<Vec<f64>>> = vec![None; m];
            for pi in members.iter() {
                for (j, pj) in members.iter().enumerate() {
                    let xp_base = j_aht(env, pi, pj, EvalMode::Exact, stream)?.value;
                    let (xp_aug, abs_mean, phi_id) = match group.kind() {
                        GroupKind::IdentityOnly { .. } => (xp_base, 0.0, "analytic"),
                        GroupKind::FullPermutations { num_labels } => {
                            let l = *num_labels;
                            if matches!(pi.kind, PolicyKind::UniformRandom { .. }) {
                                // Relabeling a uniform policy is a no-op.
                                (xp_base, 0.0, "analytic")
                            } else if pi.as_constant_action().is_some() {
                                // The augmented lever is uniform over the block.
                                if det_values[j].is_none() {
                                    let mut vals = Vec::with_capacity(l);
                                    for lever in 0..l {
                                        let det = PolicySpec::constant(
                                            format!("phi-image-{lever}"),
                                            lever,
                                            env.num_actions(0),
                                            env.horizon(),
                                        )?;
                                        vals.push(
                                            j_aht(env, &det, pj, EvalMode::Exact, stream)?.value,
                                        );
                                    }
                                    det_values[j] = Some(vals);
                                }
                                let vals = det_values[j].as_ref().expect("just computed");
                                let aug = vals.iter().sum::<f64>() / l as f64;
                                let abs = vals
                                    .iter()
                                    .map(|v| (xp_base - v).abs())
                                    .sum::<f64>()
                                    / l as f64;
                                (aug, abs, "analytic")
                            } else {
                                // No analytic shortcut: enumerate the group.
                                let ops = group.enumerate(ENUMERATION_LIMIT).map_err(|_| {
                                    Error::UnsupportedPolicy {
                                        name: pi.name.clone(),
                                        detail: format!(
                                            "exact augmentation impact needs deterministic or uniform policies (or a group of at most {ENUMERATION_LIMIT} ops); use Monte Carlo mode"
                                        ),
                                    }
                                })?;
                                let mut aug_sum = 0.0;
                                let mut abs_sum = 0.0;
                                for op in &ops {
                                    let wrapped = augment_policy(pi, op);
                                    let v =
                                        j_aht(env, &wrapped, pj, EvalMode::Exact, stream)?.value;
                                    aug_sum += v;
                                    abs_sum += (xp_base - v).abs();
                                }
                                let n = ops.len() as f64;
                                (aug_sum / n, abs_sum / n, "enumerated")
                            }
                        }
                    };
                    total += abs_mean;
                    if collect_rows {
                        rows.push(AugImpRow {
                            policy_i: pi.name.clone(),
                            policy_j: pj.name.clone(),
                            phi_id: phi_id.to_string(),
                            xp_base,
                            xp_aug,
                            abs_diff: abs_mean,
                        });
                    }
                }
            }
            Ok((rows, MetricReport::exact(total / (m * m) as f64)))
        }
        EvalMode::MonteCarlo { .. } => {
            if budget.phi_samples < 2 {
                return Err(Error::Invalid(
                    "augmentation impact needs phi_samples >= 2".to_string(),
                ));
            }
            let xp_mode = match budget.xp_episodes {
                Some(episodes) => EvalMode::MonteCarlo { episodes },
                None => EvalMode::Exact,
            };
            let mut mean_sum = 0.0;
            let mut var_sum = 0.0;
            for (i, pi) in members.iter().enumerate() {
                for (j, pj) in members.iter().enumerate() {
                    let pair_stream = stream.child(tags::METRIC, (i * m + j) as u64);
                    let xp_base =
                        crossplay(env, pi, pj, xp_mode, pair_stream.child(tags::EPISODE, 0))?
                            .value;
                    let mut abs_samples = Vec::with_capacity(budget.phi_samples);
                    for s in 0..budget.phi_samples {
                        let op = sample_uniform(
                            group,
                            &mut pair_stream.child(tags::SYMMETRY, s as u64).rng(),
                        );
                        let wrapped = augment_policy(pi, &op);
                        let xp_aug = crossplay(
                            env,
                            &wrapped,
                            pj,
                            xp_mode,
                            pair_stream.child(tags::EPISODE, (s + 1) as u64),
                        )?
                        .value;
                        let abs = (xp_base - xp_aug).abs();
                        abs_samples.push(abs);
                        if collect_rows {
                            rows.push(AugImpRow {
                                policy_i: pi.name.clone(),
                                policy_j: pj.name.clone(),
                                phi_id: s.to_string(),
                                xp_base,
                                xp_aug,
                                abs_diff: abs,
                            });
                        }
                    }
                    let (mean, se) = mean_and_stderr(&abs_samples);
                    mean_sum += mean;
                    var_sum += se * se;
                }
            }
            let pairs = (m * m) as f64;
            Ok((
                rows,
                MetricReport::monte_carlo(
                    mean_sum / pairs,
                    var_sum.sqrt() / pairs,
                    m * m * budget.phi_samples,
                ),
            ))
        }
    }
}

/// Two-sided p-value of a paired sign-flip permutation test with add-one
/// smoothing: each pair's difference is multiplied by an independent
/// uniform sign, and the proportion of resamples whose absolute mean
/// difference reaches the observed one is reported as
/// `(count + 1) / (n_resamples + 1)`.
pub fn paired_permutation_test(
    samples_a: &[f64],
    samples_b: &[f64],
    n_resamples: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    let diffs = paired_diffs(samples_a, samples_b)?;
    if n_resamples == 0 {
        return Err(Error::Invalid("n_resamples must be >= 1".to_string()));
    }
    let observed = diffs.iter().sum::<f64>().abs();
    let mut count = 0usize;
    for _ in 0..n_resamples {
        let sum: f64 = diffs
            .iter()
            .map(|d| if rng.gen::<bool>() { *d } else { -*d })
            .sum();
        if sum.abs() >= observed {
            count += 1;
        }
    }
    Ok((count + 1) as f64 / (n_resamples + 1) as f64)
}

/// Exact two-sided p-value by enumerating all `2^n` sign patterns.
pub fn paired_permutation_test_exhaustive(samples_a: &[f64], samples_b: &[f64]) -> Result<f64> {
    let diffs = paired_diffs(samples_a, samples_b)?;
    let n = diffs.len();
    if n > 24 {
        return Err(Error::Invalid(format!(
            "exhaustive enumeration of 2^{n} sign patterns is too large; use the Monte Carlo test"
        )));
    }
    let observed = diffs.iter().sum::<f64>().abs();
    let total = 1usize << n;
    let mut count = 0usize;
    for mask in 0..total {
        let sum: f64 = diffs
            .iter()
            .enumerate()
            .map(|(i, d)| if mask & (1 << i) == 0 { *d } else { -*d })
            .sum();
        if sum.abs() >= observed {
            count += 1;
        }
    }
    Ok(count as f64 / total as f64)
}

fn paired_diffs(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::Invalid(format!(
            "paired test needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Invalid("paired test needs at least 2 pairs".to_string()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x - y).collect())
}
