//! Equivalence mappings: construction, group algebra, action on
//! trajectories and policies, uniform sampling, and validation.
//!
//! A [`SymmetryOp`] stores explicit label bijections (index arrays), not
//! closures, so serialization and exact equality checks are trivial. The
//! policy augmentation direction is fixed once: the wrapped policy
//! *perceives* its history through the op and its chosen action is mapped
//! *back* through the inverse action map, i.e.
//! `augmented(a | tau) = inner(op(a) | op(tau))`.

use crate::dist::FiniteDist;
use crate::env::{ActionId, Aoh, Environment, ObsId, Policy, StateId};
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::RngCore;
use std::sync::Arc;

/// An automorphism of an environment's state/action/observation labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymmetryOp {
    env_id: String,
    state_map: Vec<StateId>,
    action_maps: Vec<Vec<ActionId>>,
    obs_maps: Vec<Vec<ObsId>>,
}

fn check_bijection(map: &[usize], context: &str) -> Result<()> {
    let mut seen = vec![false; map.len()];
    for (i, &target) in map.iter().enumerate() {
        if target >= map.len() {
            return Err(Error::NotABijection {
                context: context.to_string(),
                detail: format!("index {i} maps to {target}, outside 0..{}", map.len()),
            });
        }
        if seen[target] {
            return Err(Error::NotABijection {
                context: context.to_string(),
                detail: format!("{target} is the image of two indices"),
            });
        }
        seen[target] = true;
    }
    Ok(())
}

fn invert(map: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; map.len()];
    for (i, &t) in map.iter().enumerate() {
        inv[t] = i;
    }
    inv
}

impl SymmetryOp {
    /// Build an op, verifying every component map is a bijection.
    pub fn new(
        env_id: String,
        state_map: Vec<StateId>,
        action_maps: Vec<Vec<ActionId>>,
        obs_maps: Vec<Vec<ObsId>>,
    ) -> Result<Self> {
        check_bijection(&state_map, "state_map")?;
        for (i, m) in action_maps.iter().enumerate() {
            check_bijection(m, &format!("action_map[{i}]"))?;
        }
        for (i, m) in obs_maps.iter().enumerate() {
            check_bijection(m, &format!("obs_map[{i}]"))?;
        }
        Ok(SymmetryOp {
            env_id,
            state_map,
            action_maps,
            obs_maps,
        })
    }

    /// Build without bijectivity checks. Intended for assembling candidate
    /// ops that [`validate_symmetry`] will vet.
    pub fn from_raw_parts(
        env_id: String,
        state_map: Vec<StateId>,
        action_maps: Vec<Vec<ActionId>>,
        obs_maps: Vec<Vec<ObsId>>,
    ) -> Self {
        SymmetryOp {
            env_id,
            state_map,
            action_maps,
            obs_maps,
        }
    }

    pub fn env_id(&self) -> &str {
        &self.env_id
    }

    pub fn num_agents(&self) -> usize {
        self.action_maps.len()
    }

    pub fn state_map(&self) -> &[StateId] {
        &self.state_map
    }

    pub fn action_map(&self, agent: usize) -> &[ActionId] {
        &self.action_maps[agent]
    }

    pub fn obs_map(&self, agent: usize) -> &[ObsId] {
        &self.obs_maps[agent]
    }

    pub fn map_state(&self, s: StateId) -> Result<StateId> {
        self.state_map.get(s).copied().ok_or(Error::UnknownLabel {
            label: s,
            context: "state_map".to_string(),
            size: self.state_map.len(),
        })
    }

    pub fn map_action(&self, agent: usize, a: ActionId) -> Result<ActionId> {
        self.action_maps[agent]
            .get(a)
            .copied()
            .ok_or(Error::UnknownLabel {
                label: a,
                context: format!("action_map[{agent}]"),
                size: self.action_maps[agent].len(),
            })
    }

    pub fn map_obs(&self, agent: usize, o: ObsId) -> Result<ObsId> {
        self.obs_maps[agent]
            .get(o)
            .copied()
            .ok_or(Error::UnknownLabel {
                label: o,
                context: format!("obs_map[{agent}]"),
                size: self.obs_maps[agent].len(),
            })
    }

    /// Is every component map the identity?
    pub fn is_identity(&self) -> bool {
        let ident = |m: &[usize]| m.iter().enumerate().all(|(i, &t)| i == t);
        ident(&self.state_map)
            && self.action_maps.iter().all(|m| ident(m))
            && self.obs_maps.iter().all(|m| ident(m))
    }

    /// Serialize as a line-oriented text record, round-trippable bit-exactly.
    pub fn to_record(&self) -> String {
        fn fmt(v: &[usize]) -> String {
            let items: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            format!("[{}]", items.join(","))
        }
        let mut out = String::new();
        out.push_str(&format!("env_id: {}\n", self.env_id));
        out.push_str(&format!("state_map: {}\n", fmt(&self.state_map)));
        for (i, m) in self.action_maps.iter().enumerate() {
            out.push_str(&format!("action_map[{i}]: {}\n", fmt(m)));
        }
        for (i, m) in self.obs_maps.iter().enumerate() {
            out.push_str(&format!("obs_map[{i}]: {}\n", fmt(m)));
        }
        out
    }

    /// Parse a record produced by [`SymmetryOp::to_record`].
    pub fn from_record(text: &str) -> Result<Self> {
        let mut env_id = None;
        let mut state_map = None;
        let mut action_maps: Vec<(usize, Vec<usize>)> = Vec::new();
        let mut obs_maps: Vec<(usize, Vec<usize>)> = Vec::new();

        fn parse_array(s: &str) -> Result<Vec<usize>> {
            let inner = s
                .trim()
                .strip_prefix('[')
                .and_then(|t| t.strip_suffix(']'))
                .ok_or_else(|| Error::Schema(format!("expected [..] array, got '{s}'")))?;
            if inner.trim().is_empty() {
                return Ok(Vec::new());
            }
            inner
                .split(',')
                .map(|tok| {
                    tok.trim()
                        .parse::<usize>()
                        .map_err(|e| Error::Schema(format!("bad index '{tok}': {e}")))
                })
                .collect()
        }

        fn parse_indexed(key: &str, prefix: &str) -> Option<Result<usize>> {
            let rest = key.strip_prefix(prefix)?;
            let idx = rest.strip_prefix('[')?.strip_suffix(']')?;
            Some(
                idx.parse::<usize>()
                    .map_err(|e| Error::Schema(format!("bad map index '{idx}': {e}"))),
            )
        }

        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| Error::Schema(format!("expected 'key: value', got '{line}'")))?;
            let key = key.trim();
            match key {
                "env_id" => env_id = Some(value.trim().to_string()),
                "state_map" => state_map = Some(parse_array(value)?),
                _ if key.starts_with("action_map") => {
                    let idx = parse_indexed(key, "action_map")
                        .ok_or_else(|| Error::Schema(format!("bad key '{key}'")))??;
                    action_maps.push((idx, parse_array(value)?));
                }
                _ if key.starts_with("obs_map") => {
                    let idx = parse_indexed(key, "obs_map")
                        .ok_or_else(|| Error::Schema(format!("bad key '{key}'")))??;
                    obs_maps.push((idx, parse_array(value)?));
                }
                _ => return Err(Error::Schema(format!("unknown key '{key}'"))),
            }
        }

        let env_id = env_id.ok_or_else(|| Error::Schema("missing env_id".to_string()))?;
        let state_map = state_map.ok_or_else(|| Error::Schema("missing state_map".to_string()))?;
        action_maps.sort_by_key(|(i, _)| *i);
        obs_maps.sort_by_key(|(i, _)| *i);
        for (want, (got, _)) in action_maps.iter().enumerate() {
            if *got != want {
                return Err(Error::Schema(format!(
                    "action_map indices must be contiguous from 0, found {got}"
                )));
            }
        }
        for (want, (got, _)) in obs_maps.iter().enumerate() {
            if *got != want {
                return Err(Error::Schema(format!(
                    "obs_map indices must be contiguous from 0, found {got}"
                )));
            }
        }
        SymmetryOp::new(
            env_id,
            state_map,
            action_maps.into_iter().map(|(_, m)| m).collect(),
            obs_maps.into_iter().map(|(_, m)| m).collect(),
        )
    }
}

/// The identity automorphism of `env`.
pub fn identity<E: Environment + ?Sized>(env: &E) -> SymmetryOp {
    let n = env.num_agents();
    SymmetryOp {
        env_id: env.id(),
        state_map: (0..env.num_states()).collect(),
        action_maps: (0..n).map(|i| (0..env.num_actions(i)).collect()).collect(),
        obs_maps: (0..n)
            .map(|i| (0..env.num_observations(i)).collect())
            .collect(),
    }
}

/// Function composition: `compose(a, b)` applies `b` first, then `a`.
pub fn compose(a: &SymmetryOp, b: &SymmetryOp) -> Result<SymmetryOp> {
    if a.env_id != b.env_id {
        return Err(Error::EnvMismatch {
            left: a.env_id.clone(),
            right: b.env_id.clone(),
        });
    }
    let comp = |outer: &[usize], inner: &[usize]| -> Result<Vec<usize>> {
        if outer.len() != inner.len() {
            return Err(Error::Dimension(format!(
                "cannot compose maps of sizes {} and {}",
                outer.len(),
                inner.len()
            )));
        }
        Ok(inner.iter().map(|&x| outer[x]).collect())
    };
    Ok(SymmetryOp {
        env_id: a.env_id.clone(),
        state_map: comp(&a.state_map, &b.state_map)?,
        action_maps: a
            .action_maps
            .iter()
            .zip(&b.action_maps)
            .map(|(x, y)| comp(x, y))
            .collect::<Result<_>>()?,
        obs_maps: a
            .obs_maps
            .iter()
            .zip(&b.obs_maps)
            .map(|(x, y)| comp(x, y))
            .collect::<Result<_>>()?,
    })
}

/// The inverse automorphism: each component bijection inverted.
pub fn inverse(op: &SymmetryOp) -> SymmetryOp {
    SymmetryOp {
        env_id: op.env_id.clone(),
        state_map: invert(&op.state_map),
        action_maps: op.action_maps.iter().map(|m| invert(m)).collect(),
        obs_maps: op.obs_maps.iter().map(|m| invert(m)).collect(),
    }
}

/// Map every observation through the op's observation map and every action
/// through its action map, preserving alternation.
pub fn apply_to_trajectory(op: &SymmetryOp, aoh: &Aoh) -> Result<Aoh> {
    let agent = aoh.agent();
    if agent >= op.num_agents() {
        return Err(Error::Invalid(format!(
            "history belongs to agent {agent} but op covers {} agents",
            op.num_agents()
        )));
    }
    let observations = aoh
        .observations()
        .iter()
        .map(|&o| op.map_obs(agent, o))
        .collect::<Result<Vec<_>>>()?;
    let actions = aoh
        .actions()
        .iter()
        .map(|&a| op.map_action(agent, a))
        .collect::<Result<Vec<_>>>()?;
    Aoh::from_parts(agent, observations, actions)
}

/// A policy that perceives through `op` and emits through its inverse:
/// `augmented(a | tau) = inner(op(a) | op(tau))`.
///
/// In group terms this wrapper realizes the inverse of the "relabel the
/// policy" operator, which acts identically in expectation when ops are
/// drawn uniformly from a closed group.
#[derive(Debug, Clone)]
pub struct AugmentedPolicy<P> {
    inner: P,
    op: SymmetryOp,
    inv_action_maps: Vec<Vec<ActionId>>,
}

impl<P> AugmentedPolicy<P> {
    pub fn op(&self) -> &SymmetryOp {
        &self.op
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: Policy> Policy for AugmentedPolicy<P> {
    fn action_distribution(&self, aoh: &Aoh) -> Result<FiniteDist<ActionId>> {
        let mapped = apply_to_trajectory(&self.op, aoh)?;
        let dist = self.inner.action_distribution(&mapped)?;
        let inv = &self.inv_action_maps[aoh.agent()];
        let relabeled: Vec<(ActionId, f64)> = dist
            .iter()
            .map(|(a, p)| {
                inv.get(*a)
                    .copied()
                    .map(|b| (b, *p))
                    .ok_or(Error::UnknownLabel {
                        label: *a,
                        context: "augmented action".to_string(),
                        size: inv.len(),
                    })
            })
            .collect::<Result<_>>()?;
        FiniteDist::new(relabeled, "augmented policy action distribution")
    }
}

/// Wrap `policy` so it perceives through `op` and emits through the
/// inverse action map.
pub fn augment_policy<P: Policy>(policy: P, op: &SymmetryOp) -> AugmentedPolicy<P> {
    AugmentedPolicy {
        inner: policy,
        inv_action_maps: op.action_maps.iter().map(|m| invert(m)).collect(),
        op: op.clone(),
    }
}

/// How a [`SymmetryGroup`] is generated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GroupKind {
    /// All permutations of the label block `0..num_labels`, represented
    /// implicitly. Every element's per-agent action map equals the block
    /// permutation, and observation maps apply it to labels below
    /// `num_labels` while fixing the rest. Uniform sampling therefore makes
    /// the image of any single label uniform over the block, which is what
    /// the analytic evaluation paths rely on.
    FullPermutations { num_labels: usize },
    /// The trivial group containing only the identity.
    IdentityOnly { num_labels: usize },
}

/// A family of symmetry ops for one environment, with a uniform sampler.
#[derive(Clone)]
pub struct SymmetryGroup {
    env_id: String,
    kind: GroupKind,
    lift: Arc<dyn Fn(&[usize]) -> SymmetryOp + Send + Sync>,
}

impl std::fmt::Debug for SymmetryGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SymmetryGroup")
            .field("env_id", &self.env_id)
            .field("kind", &self.kind)
            .finish()
    }
}

impl SymmetryGroup {
    /// `lift` turns a permutation of the label block into a full op.
    pub fn new(
        env_id: String,
        kind: GroupKind,
        lift: Arc<dyn Fn(&[usize]) -> SymmetryOp + Send + Sync>,
    ) -> Self {
        SymmetryGroup { env_id, kind, lift }
    }

    pub fn env_id(&self) -> &str {
        &self.env_id
    }

    pub fn kind(&self) -> &GroupKind {
        &self.kind
    }

    pub fn num_labels(&self) -> usize {
        match self.kind {
            GroupKind::FullPermutations { num_labels } => num_labels,
            GroupKind::IdentityOnly { num_labels } => num_labels,
        }
    }

    pub fn identity(&self) -> SymmetryOp {
        let ident: Vec<usize> = (0..self.num_labels()).collect();
        (self.lift)(&ident)
    }

    /// Lift an explicit permutation of the label block into a full op.
    pub fn lift(&self, perm: &[usize]) -> Result<SymmetryOp> {
        if perm.len() != self.num_labels() {
            return Err(Error::Dimension(format!(
                "permutation has {} labels, group expects {}",
                perm.len(),
                self.num_labels()
            )));
        }
        check_bijection(perm, "group permutation")?;
        Ok((self.lift)(perm))
    }

    /// Group order, if it fits in a u128.
    pub fn size(&self) -> Option<u128> {
        match self.kind {
            GroupKind::IdentityOnly { .. } => Some(1),
            GroupKind::FullPermutations { num_labels } => {
                let mut acc: u128 = 1;
                for k in 2..=num_labels as u128 {
                    acc = acc.checked_mul(k)?;
                }
                Some(acc)
            }
        }
    }

    /// Enumerate every element. Errors if the group order exceeds `limit`.
    pub fn enumerate(&self, limit: usize) -> Result<Vec<SymmetryOp>> {
        let size = self.size().ok_or_else(|| {
            Error::Invalid("group too large to enumerate".to_string())
        })?;
        if size > limit as u128 {
            return Err(Error::Invalid(format!(
                "group has {size} elements, enumeration limit is {limit}"
            )));
        }
        match self.kind {
            GroupKind::IdentityOnly { .. } => Ok(vec![self.identity()]),
            GroupKind::FullPermutations { num_labels } => {
                let mut perm: Vec<usize> = (0..num_labels).collect();
                let mut out = Vec::with_capacity(size as usize);
                heaps(&mut perm, num_labels, &mut |p| out.push((self.lift)(p)));
                Ok(out)
            }
        }
    }
}

fn heaps(perm: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k <= 1 {
        visit(perm);
        return;
    }
    for i in 0..k {
        heaps(perm, k - 1, visit);
        if k % 2 == 0 {
            perm.swap(i, k - 1);
        } else {
            perm.swap(0, k - 1);
        }
    }
}

/// Uniform draw from the group via an unbiased shuffle of the label array.
pub fn sample_uniform(group: &SymmetryGroup, rng: &mut dyn RngCore) -> SymmetryOp {
    match group.kind {
        GroupKind::IdentityOnly { .. } => group.identity(),
        GroupKind::FullPermutations { num_labels } => {
            let mut perm: Vec<usize> = (0..num_labels).collect();
            perm.shuffle(rng);
            (group.lift)(&perm)
        }
    }
}

/// Outcome of exhaustively checking the automorphism condition.
#[derive(Debug, Clone)]
pub struct SymmetryReport {
    pub ok: bool,
    /// First few violations found, human-readable.
    pub violations: Vec<String>,
    /// Number of (state, action) style checks performed.
    pub checks: u64,
}

const MAX_VIOLATIONS: usize = 8;

fn real_dists_equal(a: &FiniteDist<f64>, b: &FiniteDist<f64>, tol: f64) -> bool {
    let mut values: Vec<f64> = a.iter().chain(b.iter()).map(|(v, _)| *v).collect();
    values.sort_by(|x, y| x.total_cmp(y));
    values.dedup_by(|x, y| (*x - *y).abs() <= tol);
    for v in values {
        let pa: f64 = a.iter().filter(|(x, _)| (x - v).abs() <= tol).map(|(_, p)| p).sum();
        let pb: f64 = b.iter().filter(|(x, _)| (x - v).abs() <= tol).map(|(_, p)| p).sum();
        if (pa - pb).abs() > tol {
            return false;
        }
    }
    true
}

/// Exhaustively verify that `op` leaves the environment's dynamics,
/// rewards, and per-agent observations unchanged up to relabeling, within
/// `tolerance`. Non-bijective component maps are rejected before any
/// enumeration.
pub fn validate_symmetry<E: Environment + ?Sized>(
    env: &E,
    op: &SymmetryOp,
    tolerance: f64,
) -> SymmetryReport {
    let mut violations = Vec::new();
    let mut checks: u64 = 0;

    let fail = |violations: &mut Vec<String>, msg: String| {
        if violations.len() < MAX_VIOLATIONS {
            violations.push(msg);
        }
    };

    if op.env_id != env.id() {
        fail(
            &mut violations,
            format!("op bound to '{}' but env is '{}'", op.env_id, env.id()),
        );
        return SymmetryReport {
            ok: false,
            violations,
            checks,
        };
    }

    let n = env.num_agents();
    let shape_ok = op.state_map.len() == env.num_states()
        && op.action_maps.len() == n
        && op.obs_maps.len() == n
        && (0..n).all(|i| op.action_maps[i].len() == env.num_actions(i))
        && (0..n).all(|i| op.obs_maps[i].len() == env.num_observations(i));
    if !shape_ok {
        fail(&mut violations, "component map sizes do not match the environment".to_string());
        return SymmetryReport {
            ok: false,
            violations,
            checks,
        };
    }

    if let Err(e) = check_bijection(&op.state_map, "state_map") {
        fail(&mut violations, e.to_string());
    }
    for i in 0..n {
        if let Err(e) = check_bijection(&op.action_maps[i], &format!("action_map[{i}]")) {
            fail(&mut violations, e.to_string());
        }
        if let Err(e) = check_bijection(&op.obs_maps[i], &format!("obs_map[{i}]")) {
            fail(&mut violations, e.to_string());
        }
    }
    if !violations.is_empty() {
        return SymmetryReport {
            ok: false,
            violations,
            checks,
        };
    }

    let inv_state = invert(&op.state_map);

    // Initial-state invariance: P0(phi(s)) = P0(s).
    let p0 = env.initial_state();
    for s in 0..env.num_states() {
        checks += 1;
        let lhs = p0.prob(&op.state_map[s]);
        let rhs = p0.prob(&s);
        if (lhs - rhs).abs() > tolerance {
            fail(
                &mut violations,
                format!("initial state: P0(phi({s}))={lhs} but P0({s})={rhs}"),
            );
        }
    }

    // Enumerate joint actions once.
    let mut joints: Vec<Vec<ActionId>> = vec![vec![]];
    for i in 0..n {
        let mut next = Vec::new();
        for j in &joints {
            for a in 0..env.num_actions(i) {
                let mut jj = j.clone();
                jj.push(a);
                next.push(jj);
            }
        }
        joints = next;
    }
    let map_joint = |joint: &[ActionId]| -> Vec<ActionId> {
        joint
            .iter()
            .enumerate()
            .map(|(i, &a)| op.action_maps[i][a])
            .collect()
    };

    for s in 0..env.num_states() {
        let fs = op.state_map[s];
        for joint in &joints {
            if violations.len() >= MAX_VIOLATIONS {
                break;
            }
            let fjoint = map_joint(joint);

            // Transition: T(phi(s') | phi(s), phi(a)) = T(s' | s, a).
            checks += 1;
            let orig = env.transition(s, joint);
            let mapped = env.transition(fs, &fjoint);
            let mut support: Vec<StateId> = orig.iter().map(|(x, _)| *x).collect();
            support.extend(mapped.iter().map(|(x, _)| inv_state[*x]));
            support.sort_unstable();
            support.dedup();
            for s_next in support {
                let lhs = mapped.prob(&op.state_map[s_next]);
                let rhs = orig.prob(&s_next);
                if (lhs - rhs).abs() > tolerance {
                    fail(
                        &mut violations,
                        format!(
                            "transition: T(phi({s_next})|phi({s}),phi({joint:?}))={lhs} but T({s_next}|{s},{joint:?})={rhs}"
                        ),
                    );
                }
            }

            // Reward: R(. | phi(s'), phi(a)) = R(. | s', a) as real-valued
            // distributions, for every arrived-at state.
            for s_next in orig.iter().map(|(x, _)| *x) {
                checks += 1;
                let r_orig = env.reward(s_next, joint);
                let r_mapped = env.reward(op.state_map[s_next], &fjoint);
                if !real_dists_equal(&r_orig, &r_mapped, tolerance) {
                    fail(
                        &mut violations,
                        format!("reward: R(.|phi({s_next}),phi({joint:?})) != R(.|{s_next},{joint:?})"),
                    );
                }

                // Observation: U_i(phi(o) | phi(s'), phi(a)) = U_i(o | s', a).
                for agent in 0..n {
                    checks += 1;
                    let u_orig = env.observation(agent, s_next, Some(joint));
                    let u_mapped = env.observation(agent, op.state_map[s_next], Some(&fjoint));
                    for o in 0..env.num_observations(agent) {
                        let lhs = u_mapped.prob(&op.obs_maps[agent][o]);
                        let rhs = u_orig.prob(&o);
                        if (lhs - rhs).abs() > tolerance {
                            fail(
                                &mut violations,
                                format!(
                                    "observation: U_{agent}(phi({o})|phi({s_next}),phi({joint:?}))={lhs} != {rhs}"
                                ),
                            );
                        }
                    }
                }
            }
        }

        // Initial observations: U_i(phi(o) | phi(s), None) = U_i(o | s, None).
        for agent in 0..n {
            checks += 1;
            let u_orig = env.observation(agent, s, None);
            let u_mapped = env.observation(agent, fs, None);
            for o in 0..env.num_observations(agent) {
                let lhs = u_mapped.prob(&op.obs_maps[agent][o]);
                let rhs = u_orig.prob(&o);
                if (lhs - rhs).abs() > tolerance {
                    fail(
                        &mut violations,
                        format!("initial observation: U_{agent}(phi({o})|phi({s}))={lhs} != {rhs}"),
                    );
                }
            }
        }
    }

    SymmetryReport {
        ok: violations.is_empty(),
        violations,
        checks,
    }
}
