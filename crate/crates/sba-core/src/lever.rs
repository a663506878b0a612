//! The iterated lever coordination game.
//!
//! Two players simultaneously pull one of `num_levers` levers each round
//! and earn `reward_on_match` whenever they pick the same lever. From round
//! 2 onward each player observes which lever the partner pulled in the
//! previous round. Any permutation of the levers leaves the game unchanged,
//! which gives the game its symmetry class.

use crate::dist::FiniteDist;
use crate::env::{ActionId, Aoh, Environment, ObsId, Policy, StateId};
use crate::error::{Error, Result};
use crate::population::{Population, PolicySpec};
use crate::symmetry::{GroupKind, SymmetryGroup, SymmetryOp};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeverGameConfig {
    #[serde(default = "default_levers")]
    pub num_levers: usize,
    #[serde(default = "default_rounds")]
    pub num_rounds: usize,
    #[serde(default = "default_reward")]
    pub reward_on_match: f64,
}

fn default_levers() -> usize {
    10
}
fn default_rounds() -> usize {
    2
}
fn default_reward() -> f64 {
    1.0
}

impl Default for LeverGameConfig {
    fn default() -> Self {
        LeverGameConfig {
            num_levers: default_levers(),
            num_rounds: default_rounds(),
            reward_on_match: default_reward(),
        }
    }
}

impl LeverGameConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_levers < 2 {
            return Err(Error::Invalid("lever game needs at least 2 levers".to_string()));
        }
        if self.num_rounds < 1 {
            return Err(Error::Invalid("lever game needs at least 1 round".to_string()));
        }
        if !self.reward_on_match.is_finite() {
            return Err(Error::Invalid("reward_on_match must be finite".to_string()));
        }
        Ok(())
    }

    /// Observation label meaning "no partner action yet" (round 1).
    pub fn none_label(&self) -> ObsId {
        self.num_levers
    }
}

/// One agent's view of a lever-game step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LeverObservation {
    /// 1-based round index.
    pub round_index: usize,
    /// Partner's previous action; `None` exactly in round 1.
    pub partner_previous_action: Option<ActionId>,
}

impl LeverObservation {
    pub fn new(round_index: usize, partner_previous_action: Option<ActionId>) -> Result<Self> {
        if (round_index == 1) != partner_previous_action.is_none() {
            return Err(Error::Invalid(format!(
                "round {round_index} observation must {} a partner action",
                if round_index == 1 { "not carry" } else { "carry" }
            )));
        }
        Ok(LeverObservation {
            round_index,
            partner_previous_action,
        })
    }

    /// Decode from a raw observation label at a given round. Label
    /// `num_levers` is the no-partner sentinel.
    pub fn from_label(round_index: usize, label: ObsId, num_levers: usize) -> Result<Self> {
        let partner = if label == num_levers {
            None
        } else if label < num_levers {
            Some(label)
        } else {
            return Err(Error::UnknownLabel {
                label,
                context: "lever observation".to_string(),
                size: num_levers + 1,
            });
        };
        LeverObservation::new(round_index, partner)
    }

    pub fn label(&self, config: &LeverGameConfig) -> ObsId {
        self.partner_previous_action.unwrap_or(config.none_label())
    }

    /// Every observation class of a configuration, in canonical order.
    pub fn enumerate(config: &LeverGameConfig) -> Vec<LeverObservation> {
        let mut all = vec![LeverObservation {
            round_index: 1,
            partner_previous_action: None,
        }];
        for round in 2..=config.num_rounds {
            for k in 0..config.num_levers {
                all.push(LeverObservation {
                    round_index: round,
                    partner_previous_action: Some(k),
                });
            }
        }
        all
    }
}

/// The lever game as a finite Dec-POMDP.
///
/// State 0 is the start; after `t` completed rounds the state records the
/// round count and the last joint action. All dynamics are deterministic.
#[derive(Debug, Clone)]
pub struct LeverGame {
    config: LeverGameConfig,
}

pub fn make_env(config: LeverGameConfig) -> Result<LeverGame> {
    config.validate()?;
    Ok(LeverGame { config })
}

pub fn env_id(config: &LeverGameConfig) -> String {
    format!(
        "lever(levers={},rounds={},reward={})",
        config.num_levers, config.num_rounds, config.reward_on_match
    )
}

impl LeverGame {
    pub fn config(&self) -> &LeverGameConfig {
        &self.config
    }

    fn state_id(&self, rounds_played: usize, joint: &[ActionId]) -> StateId {
        let l = self.config.num_levers;
        1 + (rounds_played - 1) * l * l + joint[0] * l + joint[1]
    }

    fn rounds_played(&self, state: StateId) -> usize {
        if state == 0 {
            0
        } else {
            let l = self.config.num_levers;
            (state - 1) / (l * l) + 1
        }
    }
}

impl Environment for LeverGame {
    fn id(&self) -> String {
        env_id(&self.config)
    }

    fn num_agents(&self) -> usize {
        2
    }

    fn horizon(&self) -> usize {
        self.config.num_rounds
    }

    fn discount(&self) -> f64 {
        1.0
    }

    fn num_states(&self) -> usize {
        let l = self.config.num_levers;
        1 + self.config.num_rounds * l * l
    }

    fn num_actions(&self, _agent: usize) -> usize {
        self.config.num_levers
    }

    fn num_observations(&self, _agent: usize) -> usize {
        self.config.num_levers + 1
    }

    fn initial_state(&self) -> FiniteDist<StateId> {
        FiniteDist::point(0)
    }

    fn transition(&self, state: StateId, joint_action: &[ActionId]) -> FiniteDist<StateId> {
        let t = self.rounds_played(state);
        if t < self.config.num_rounds {
            FiniteDist::point(self.state_id(t + 1, joint_action))
        } else {
            // Terminal states absorb; never reached inside the horizon.
            FiniteDist::point(state)
        }
    }

    fn observation(
        &self,
        agent: usize,
        _state: StateId,
        prev_action: Option<&[ActionId]>,
    ) -> FiniteDist<ObsId> {
        match prev_action {
            None => FiniteDist::point(self.config.none_label()),
            Some(joint) => FiniteDist::point(joint[1 - agent]),
        }
    }

    fn reward(&self, _state: StateId, joint_action: &[ActionId]) -> FiniteDist<f64> {
        let r = if joint_action[0] == joint_action[1] {
            self.config.reward_on_match
        } else {
            0.0
        };
        FiniteDist::point(r)
    }
}

fn lift_for(config: LeverGameConfig) -> Arc<dyn Fn(&[usize]) -> SymmetryOp + Send + Sync> {
    Arc::new(move |perm: &[usize]| {
        let l = config.num_levers;
        debug_assert_eq!(perm.len(), l);
        let action_map: Vec<ActionId> = perm.to_vec();
        let mut obs_map: Vec<ObsId> = perm.to_vec();
        obs_map.push(config.none_label()); // the no-partner sentinel is fixed
        let mut state_map: Vec<StateId> = vec![0];
        for t in 1..=config.num_rounds {
            for a in 0..l {
                for b in 0..l {
                    state_map.push(1 + (t - 1) * l * l + perm[a] * l + perm[b]);
                }
            }
        }
        SymmetryOp::from_raw_parts(
            env_id(&config),
            state_map,
            vec![action_map.clone(), action_map],
            vec![obs_map.clone(), obs_map],
        )
    })
}

/// The full symmetric group on lever indices, acting identically on both
/// agents' actions and on the partner-action field of observations (the
/// no-partner sentinel is fixed).
pub fn lever_symmetry_group(config: &LeverGameConfig) -> SymmetryGroup {
    SymmetryGroup::new(
        env_id(config),
        GroupKind::FullPermutations {
            num_labels: config.num_levers,
        },
        lift_for(*config),
    )
}

/// The trivial group containing only the identity op.
pub fn lever_identity_group(config: &LeverGameConfig) -> SymmetryGroup {
    SymmetryGroup::new(
        env_id(config),
        GroupKind::IdentityOnly {
            num_labels: config.num_levers,
        },
        lift_for(*config),
    )
}

/// One observation-independent deterministic policy per index, pulling
/// that lever every round; ordering follows `lever_indices`.
pub fn make_deterministic_population(
    name: impl Into<String>,
    lever_indices: &[usize],
    config: &LeverGameConfig,
) -> Result<Population> {
    let mut members = Vec::with_capacity(lever_indices.len());
    for &idx in lever_indices {
        if idx >= config.num_levers {
            return Err(Error::UnknownLabel {
                label: idx,
                context: "lever index".to_string(),
                size: config.num_levers,
            });
        }
        members.push(PolicySpec::constant(
            format!("det-{idx}"),
            idx,
            config.num_levers,
            config.num_rounds,
        )?);
    }
    Population::new(name, members)
}

/// Round 1: uniform over levers; later rounds: copy the partner's observed
/// lever. Equivariant under every lever permutation.
#[derive(Debug, Clone, Copy)]
pub struct FollowerPolicy {
    pub num_levers: usize,
}

impl Policy for FollowerPolicy {
    fn action_distribution(&self, aoh: &Aoh) -> Result<FiniteDist<ActionId>> {
        let label = aoh.last_observation().ok_or_else(|| {
            Error::Invalid("follower queried on an empty history".to_string())
        })?;
        if label == self.num_levers {
            Ok(FiniteDist::uniform(self.num_levers))
        } else if label < self.num_levers {
            Ok(FiniteDist::point(label))
        } else {
            Err(Error::UnknownLabel {
                label,
                context: "follower observation".to_string(),
                size: self.num_levers + 1,
            })
        }
    }
}

pub(crate) fn constant_levers(pop: &Population) -> Result<Vec<usize>> {
    pop.members
        .iter()
        .map(|m| {
            m.as_constant_action().ok_or_else(|| Error::UnsupportedPolicy {
                name: m.name.clone(),
                detail: "expected an observation-independent deterministic lever policy".to_string(),
            })
        })
        .collect()
}

/// Closed-form optimum of the best-response objective for deterministic
/// lever populations, with and without symmetry-breaking augmentation.
///
/// Round 1 contributes the best match probability under the (augmented)
/// teammate lever distribution; every later round contributes the
/// probability that the observed lever admits a learned response. Round-1
/// ties break toward the lowest lever index. Returns
/// `(train_value, eval_value)`.
pub fn optimal_br_value(
    train_pop: &Population,
    eval_pop: &Population,
    sba: bool,
    config: &LeverGameConfig,
) -> Result<(f64, f64)> {
    config.validate()?;
    let train = constant_levers(train_pop)?;
    let eval = constant_levers(eval_pop)?;
    let l = config.num_levers;
    let later_rounds = (config.num_rounds - 1) as f64;

    if sba {
        // Augmentation makes the teammate's lever uniform, so lever identity
        // washes out: best round-1 match probability is 1/L and every lever
        // has a learned response in later rounds.
        let v = config.reward_on_match * (1.0 / l as f64 + later_rounds);
        return Ok((v, v));
    }

    let mut train_counts = vec![0usize; l];
    for &i in &train {
        train_counts[i] += 1;
    }
    let best = *train_counts.iter().max().expect("non-empty");
    let a_star = train_counts.iter().position(|&c| c == best).expect("non-empty");

    let reward = config.reward_on_match;
    let train_value =
        reward * (best as f64 / train.len() as f64 + later_rounds);

    let eval_first = eval.iter().filter(|&&k| k == a_star).count() as f64 / eval.len() as f64;
    let coverage = eval.iter().filter(|&&k| train_counts[k] > 0).count() as f64
        / eval.len() as f64;
    let eval_value = reward * (eval_first + later_rounds * coverage);

    Ok((train_value, eval_value))
}
