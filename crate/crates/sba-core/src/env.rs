//! Dec-POMDP abstraction, trajectory bookkeeping, episode rollout, and
//! expected-return evaluation.
//!
//! An [`Environment`] is a finite decentralized POMDP whose transition,
//! observation, and reward pieces are all exposed as explicit finite
//! distributions. Sampling rollouts and exact depth-first expectation
//! enumeration therefore consume the same objects, so the Monte Carlo
//! estimator can always be cross-checked against the exact value.

use crate::dist::{mean_and_stderr, FiniteDist};
use crate::error::{Error, Result};
use crate::rng::{tags, SeedStream};
use rand::RngCore;

pub type StateId = usize;
pub type ActionId = usize;
pub type ObsId = usize;

/// Default ceiling on the number of leaves the exact evaluator may visit.
pub const DEFAULT_BRANCH_CEILING: u64 = 10_000_000;

/// A finite simultaneous-move Dec-POMDP.
///
/// All label spaces are dense integer ranges. Dynamics must be total over
/// the declared spaces (including states unreachable in a rollout), which
/// keeps symmetry validation a plain enumeration.
pub trait Environment: Send + Sync {
    /// Stable identifier used to bind symmetry ops to their environment.
    fn id(&self) -> String;

    fn num_agents(&self) -> usize;

    /// Number of decision steps per episode.
    fn horizon(&self) -> usize;

    fn discount(&self) -> f64;

    fn num_states(&self) -> usize;

    fn num_actions(&self, agent: usize) -> usize;

    fn num_observations(&self, agent: usize) -> usize;

    fn initial_state(&self) -> FiniteDist<StateId>;

    /// Distribution of the next state given the current state and joint action.
    fn transition(&self, state: StateId, joint_action: &[ActionId]) -> FiniteDist<StateId>;

    /// Distribution of agent `agent`'s observation on arriving in `state`.
    /// `prev_action` is `None` only for the initial observation of the episode.
    fn observation(
        &self,
        agent: usize,
        state: StateId,
        prev_action: Option<&[ActionId]>,
    ) -> FiniteDist<ObsId>;

    /// Distribution of the common reward given the arrived-at state and the
    /// joint action that produced it.
    fn reward(&self, state: StateId, joint_action: &[ActionId]) -> FiniteDist<f64>;
}

/// One agent's alternating observation/action record.
///
/// Entries strictly alternate observation, action, observation, ...,
/// beginning with an observation; as a policy input it always ends on an
/// observation and never exceeds `2 * horizon - 1` entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Aoh {
    agent: usize,
    observations: Vec<ObsId>,
    actions: Vec<ActionId>,
}

impl Aoh {
    pub fn new(agent: usize) -> Self {
        Aoh {
            agent,
            observations: Vec::new(),
            actions: Vec::new(),
        }
    }

    /// Build from interleaved entries; `observations` must be one longer
    /// than `actions` (ends on an observation) or equal in length.
    pub fn from_parts(agent: usize, observations: Vec<ObsId>, actions: Vec<ActionId>) -> Result<Self> {
        if observations.len() != actions.len() && observations.len() != actions.len() + 1 {
            return Err(Error::Invalid(format!(
                "history must alternate o,a,o,... starting with an observation; got {} observations and {} actions",
                observations.len(),
                actions.len()
            )));
        }
        Ok(Aoh {
            agent,
            observations,
            actions,
        })
    }

    pub fn agent(&self) -> usize {
        self.agent
    }

    pub fn observations(&self) -> &[ObsId] {
        &self.observations
    }

    pub fn actions(&self) -> &[ActionId] {
        &self.actions
    }

    /// 1-based decision round: the number of observations received.
    pub fn round(&self) -> usize {
        self.observations.len()
    }

    pub fn last_observation(&self) -> Option<ObsId> {
        self.observations.last().copied()
    }

    /// Total entry count (observations + actions).
    pub fn len(&self) -> usize {
        self.observations.len() + self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn push_observation(&mut self, obs: ObsId) {
        debug_assert_eq!(
            self.observations.len(),
            self.actions.len(),
            "observation must follow an action (or start the history)"
        );
        self.observations.push(obs);
    }

    pub fn push_action(&mut self, action: ActionId) {
        debug_assert_eq!(
            self.observations.len(),
            self.actions.len() + 1,
            "action must follow an observation"
        );
        self.actions.push(action);
    }
}

/// A per-agent decision rule queried on the agent's own history.
pub trait Policy: Send + Sync {
    /// Explicit action distribution at this history.
    fn action_distribution(&self, aoh: &Aoh) -> Result<FiniteDist<ActionId>>;

    /// Sample an action consistently with [`Policy::action_distribution`].
    fn act(&self, aoh: &Aoh, rng: &mut dyn RngCore) -> Result<ActionId> {
        Ok(*self.action_distribution(aoh)?.sample(rng))
    }
}

impl<P: Policy + ?Sized> Policy for &P {
    fn action_distribution(&self, aoh: &Aoh) -> Result<FiniteDist<ActionId>> {
        (**self).action_distribution(aoh)
    }

    fn act(&self, aoh: &Aoh, rng: &mut dyn RngCore) -> Result<ActionId> {
        (**self).act(aoh, rng)
    }
}

impl Policy for Box<dyn Policy> {
    fn action_distribution(&self, aoh: &Aoh) -> Result<FiniteDist<ActionId>> {
        (**self).action_distribution(aoh)
    }

    fn act(&self, aoh: &Aoh, rng: &mut dyn RngCore) -> Result<ActionId> {
        (**self).act(aoh, rng)
    }
}

/// Complete record of one rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    /// Per-agent full histories including the final action.
    pub agent_histories: Vec<Aoh>,
    /// States visited: s_0 .. s_T.
    pub states: Vec<StateId>,
    /// Per-step common rewards r_1 .. r_T.
    pub rewards: Vec<f64>,
    pub undiscounted_return: f64,
    pub discounted_return: f64,
}

/// Roll out one episode under the given joint policy.
///
/// Each agent's history is built only from its own observations and
/// actions. Per-agent action sampling and environment chance each draw
/// from child streams of `stream`, so results are bit-reproducible and
/// independent of any parallel rollout order.
pub fn run_episode<E: Environment + ?Sized, P: Policy>(
    env: &E,
    joint_policy: &[P],
    stream: SeedStream,
) -> Result<EpisodeResult> {
    let n = env.num_agents();
    if joint_policy.len() != n {
        return Err(Error::Invalid(format!(
            "environment has {n} agents but {} policies were supplied",
            joint_policy.len()
        )));
    }
    let mut agent_rngs: Vec<_> = (0..n).map(|i| stream.child(tags::AGENT, i as u64).rng()).collect();
    let mut env_rng = stream.child(tags::ENV, 0).rng();

    let mut state = *env.initial_state().sample(&mut env_rng);
    let mut states = vec![state];
    let mut histories: Vec<Aoh> = (0..n).map(Aoh::new).collect();
    for (i, h) in histories.iter_mut().enumerate() {
        h.push_observation(*env.observation(i, state, None).sample(&mut env_rng));
    }

    let gamma = env.discount();
    let mut rewards = Vec::with_capacity(env.horizon());
    let mut undiscounted = 0.0;
    let mut discounted = 0.0;

    for t in 1..=env.horizon() {
        let mut joint = Vec::with_capacity(n);
        for i in 0..n {
            let a = joint_policy[i].act(&histories[i], &mut agent_rngs[i])?;
            if a >= env.num_actions(i) {
                return Err(Error::ActionOutOfRange {
                    agent: i,
                    step: t,
                    action: a,
                    num_actions: env.num_actions(i),
                });
            }
            joint.push(a);
        }
        for (i, h) in histories.iter_mut().enumerate() {
            h.push_action(joint[i]);
        }

        let next = *env.transition(state, &joint).sample(&mut env_rng);
        let r = *env.reward(next, &joint).sample(&mut env_rng);
        rewards.push(r);
        undiscounted += r;
        discounted += gamma.powi(t as i32 - 1) * r;

        if t < env.horizon() {
            for (i, h) in histories.iter_mut().enumerate() {
                h.push_observation(*env.observation(i, next, Some(&joint)).sample(&mut env_rng));
            }
        }
        state = next;
        states.push(state);
    }

    Ok(EpisodeResult {
        agent_histories: histories,
        states,
        rewards,
        undiscounted_return: undiscounted,
        discounted_return: discounted,
    })
}

/// Exact expected discounted return of a joint policy, by depth-first
/// enumeration of the (action, transition, reward, observation) tree with
/// the default branch ceiling.
pub fn expected_return_exact<E: Environment + ?Sized, P: Policy>(
    env: &E,
    joint_policy: &[P],
) -> Result<f64> {
    expected_return_exact_with_ceiling(env, joint_policy, DEFAULT_BRANCH_CEILING)
}

/// Exact expected return with an explicit ceiling on visited branches.
pub fn expected_return_exact_with_ceiling<E: Environment + ?Sized, P: Policy>(
    env: &E,
    joint_policy: &[P],
    ceiling: u64,
) -> Result<f64> {
    let n = env.num_agents();
    if joint_policy.len() != n {
        return Err(Error::Invalid(format!(
            "environment has {n} agents but {} policies were supplied",
            joint_policy.len()
        )));
    }
    let mut walk = Enumeration {
        env,
        policies: joint_policy,
        ceiling,
        visited: 0,
        total: 0.0,
    };
    for (s0, p0) in env.initial_state().iter() {
        let mut histories: Vec<Aoh> = (0..n).map(Aoh::new).collect();
        let obs_dists: Vec<FiniteDist<ObsId>> =
            (0..n).map(|i| env.observation(i, *s0, None)).collect();
        walk.branch_observations(*s0, &mut histories, &obs_dists, 0, *p0, 1)?;
    }
    Ok(walk.total)
}

struct Enumeration<'a, E: Environment + ?Sized, P: Policy> {
    env: &'a E,
    policies: &'a [P],
    ceiling: u64,
    visited: u64,
    total: f64,
}

impl<'a, E: Environment + ?Sized, P: Policy> Enumeration<'a, E, P> {
    /// Branch over the product of per-agent observation distributions,
    /// then descend into decision step `t`.
    fn branch_observations(
        &mut self,
        state: StateId,
        histories: &mut Vec<Aoh>,
        obs_dists: &[FiniteDist<ObsId>],
        agent: usize,
        prob: f64,
        t: usize,
    ) -> Result<()> {
        if agent == histories.len() {
            return self.step(state, histories, prob, t);
        }
        for (o, po) in obs_dists[agent].iter() {
            histories[agent].push_observation(*o);
            self.branch_observations(state, histories, obs_dists, agent + 1, prob * po, t)?;
            histories[agent].observations.pop();
        }
        Ok(())
    }

    fn step(&mut self, state: StateId, histories: &mut Vec<Aoh>, prob: f64, t: usize) -> Result<()> {
        if t > self.env.horizon() {
            return Ok(());
        }
        let dists: Vec<FiniteDist<ActionId>> = histories
            .iter()
            .enumerate()
            .map(|(i, h)| self.policies[i].action_distribution(h))
            .collect::<Result<_>>()?;
        for (i, d) in dists.iter().enumerate() {
            for (a, _) in d.iter() {
                if *a >= self.env.num_actions(i) {
                    return Err(Error::ActionOutOfRange {
                        agent: i,
                        step: t,
                        action: *a,
                        num_actions: self.env.num_actions(i),
                    });
                }
            }
        }
        let mut joint = vec![0usize; histories.len()];
        self.branch_joint_action(state, histories, &dists, &mut joint, 0, prob, t)
    }

    #[allow(clippy::too_many_arguments)]
    fn branch_joint_action(
        &mut self,
        state: StateId,
        histories: &mut Vec<Aoh>,
        dists: &[FiniteDist<ActionId>],
        joint: &mut Vec<ActionId>,
        agent: usize,
        prob: f64,
        t: usize,
    ) -> Result<()> {
        let n = histories.len();
        if agent < n {
            for (a, pa) in dists[agent].iter() {
                joint[agent] = *a;
                self.branch_joint_action(state, histories, dists, joint, agent + 1, prob * pa, t)?;
            }
            return Ok(());
        }

        let gamma_pow = self.env.discount().powi(t as i32 - 1);
        for (next, pt) in self.env.transition(state, joint).iter() {
            self.visited += 1;
            if self.visited > self.ceiling {
                return Err(Error::BranchCeilingExceeded { ceiling: self.ceiling });
            }
            let branch_prob = prob * pt;
            // Rewards enter linearly, so the reward mean folds in directly.
            self.total += branch_prob * gamma_pow * self.env.reward(*next, joint).mean();

            if t < self.env.horizon() {
                for (i, h) in histories.iter_mut().enumerate() {
                    h.push_action(joint[i]);
                }
                let obs_dists: Vec<FiniteDist<ObsId>> = (0..n)
                    .map(|i| self.env.observation(i, *next, Some(joint)))
                    .collect();
                self.branch_observations(*next, histories, &obs_dists, 0, branch_prob, t + 1)?;
                for h in histories.iter_mut() {
                    h.actions.pop();
                }
            }
        }
        Ok(())
    }
}

/// Monte Carlo estimate of the expected discounted return.
///
/// Returns the sample mean and its standard error (sample std with n-1
/// denominator divided by sqrt n). Episode `i` uses the child stream
/// `(EPISODE, i)` of `stream`.
pub fn expected_return_mc<E: Environment + ?Sized, P: Policy>(
    env: &E,
    joint_policy: &[P],
    n_episodes: usize,
    stream: SeedStream,
) -> Result<(f64, f64)> {
    if n_episodes < 2 {
        return Err(Error::Invalid(
            "Monte Carlo estimation needs at least 2 episodes".to_string(),
        ));
    }
    let mut returns = Vec::with_capacity(n_episodes);
    for i in 0..n_episodes {
        let ep = run_episode(env, joint_policy, stream.child(tags::EPISODE, i as u64))?;
        returns.push(ep.discounted_return);
    }
    Ok(mean_and_stderr(&returns))
}
