//! Best-response training with and without symmetry-breaking augmentation.
//!
//! Each episode pairs the learning agent with a teammate drawn uniformly
//! from the training population. When augmentation is on, a symmetry op is
//! sampled per episode; the agent perceives its observations through the op
//! and its actions are mapped back through the inverse before hitting the
//! environment, so the stored experience lives entirely in the agent's
//! (relabeled) frame. Only the learning agent's transitions are kept.
//!
//! One optimization pass runs per epoch: the epoch's transitions are
//! shuffled and regressed in mini-batches toward the observed
//! return-to-go (with a 2-round horizon and no discounting this is the
//! plain Monte-Carlo target), with Adam updates.

pub mod mlp;

use crate::env::{ActionId, Environment, Policy};
use crate::error::{Error, Result};
use crate::lever::{constant_levers, LeverGame, LeverGameConfig, LeverObservation};
use crate::metrics::{self, EvalMode};
use crate::population::{sample_member, Population, PolicySpec, TableEntry, TablePolicy};
use crate::rng::{tags, SeedStream};
use crate::symmetry::{inverse, sample_uniform, GroupKind, SymmetryGroup, SymmetryOp};
use mlp::{grad_batch, AdamState, BatchItem, MlpParams};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// One-hot of the partner's previous action over `num_levers + 1` slots
/// (last slot = "no partner action yet") plus a round-one indicator bit.
pub fn encode_observation(obs: &LeverObservation, num_levers: usize) -> Vec<f64> {
    let mut x = vec![0.0; num_levers + 2];
    let slot = obs.partner_previous_action.unwrap_or(num_levers);
    x[slot] = 1.0;
    if obs.round_index == 1 {
        x[num_levers + 1] = 1.0;
    }
    x
}

/// Argmax with ties broken toward the lowest index.
pub fn argmax_tie_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Greedy action of an MLP queried on a lever-game history. The lever
/// count is recovered from the input width (`num_levers + 2`).
pub fn mlp_greedy_action(params: &MlpParams, aoh: &crate::env::Aoh) -> Result<ActionId> {
    let num_levers = params.input_size().checked_sub(2).ok_or_else(|| {
        Error::Dimension("mlp input narrower than any lever encoding".to_string())
    })?;
    let label = aoh
        .last_observation()
        .ok_or_else(|| Error::Invalid("mlp policy queried on an empty history".to_string()))?;
    let obs = LeverObservation::from_label(aoh.round(), label, num_levers)?;
    let values = params.forward(&encode_observation(&obs, num_levers))?;
    Ok(argmax_tie_lowest(&values))
}

/// Linear exploration schedule: `initial` at epoch 0 decaying to `final`
/// over `decay_epochs` (the full run when unset), then held.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplorationSchedule {
    pub initial: f64,
    #[serde(rename = "final")]
    pub final_value: f64,
    #[serde(default)]
    pub decay_epochs: Option<usize>,
}

impl Default for ExplorationSchedule {
    fn default() -> Self {
        ExplorationSchedule {
            initial: 0.9,
            final_value: 0.05,
            decay_epochs: None,
        }
    }
}

impl ExplorationSchedule {
    pub fn value_at(&self, epoch: usize, total_epochs: usize) -> f64 {
        let span = self.decay_epochs.unwrap_or(total_epochs).max(1);
        let frac = (epoch as f64 / span as f64).min(1.0);
        self.initial + (self.final_value - self.initial) * frac
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [("initial", self.initial), ("final", self.final_value)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Invalid(format!(
                    "exploration {name} epsilon {v} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub hidden_size: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub exploration: ExplorationSchedule,
    pub sba_enabled: bool,
    /// Evaluate the curve with augmented teammates; defaults to following
    /// `sba_enabled`.
    pub augment_eval: Option<bool>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            hidden_size: 20,
            batch_size: 10,
            epochs: 1000,
            episodes_per_epoch: 10,
            exploration: ExplorationSchedule::default(),
            sba_enabled: false,
            augment_eval: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Invalid("epochs must be >= 1".to_string()));
        }
        if self.batch_size < 1 {
            return Err(Error::Invalid("batch_size must be >= 1".to_string()));
        }
        if self.episodes_per_epoch < 1 {
            return Err(Error::Invalid("episodes_per_epoch must be >= 1".to_string()));
        }
        if self.hidden_size < 1 {
            return Err(Error::Invalid("hidden_size must be >= 1".to_string()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Invalid("learning_rate must be positive".to_string()));
        }
        self.exploration.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub epoch: usize,
    pub train_return: f64,
    pub eval_return: f64,
}

/// Per-epoch exact train/eval returns of the greedy policy, for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub seed: u64,
    pub records: Vec<CurveRecord>,
}

/// Result of one training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The trained network as a portable policy.
    pub policy: PolicySpec,
    /// The final greedy policy exported as a deterministic table.
    pub greedy: PolicySpec,
    pub curve: TrainingCurve,
}

struct TransitionStep {
    encoding: Vec<f64>,
    action: ActionId,
    reward: f64,
}

fn rollout_training_episode(
    env: &LeverGame,
    params: &MlpParams,
    teammate: &PolicySpec,
    op: Option<&SymmetryOp>,
    epsilon: f64,
    stream: SeedStream,
) -> Result<Vec<TransitionStep>> {
    let config = *env.config();
    let num_levers = config.num_levers;
    let mut explore_rng = stream.child(tags::AGENT, 0).rng();
    let mut teammate_rng = stream.child(tags::AGENT, 1).rng();
    let mut env_rng = stream.child(tags::ENV, 0).rng();
    let inv_op = op.map(inverse);

    let mut state = *env.initial_state().sample(&mut env_rng);
    let mut raw_label = *env.observation(0, state, None).sample(&mut env_rng);
    let mut teammate_aoh = crate::env::Aoh::new(1);
    teammate_aoh.push_observation(*env.observation(1, state, None).sample(&mut env_rng));

    let mut steps = Vec::with_capacity(env.horizon());
    for t in 1..=env.horizon() {
        let frame_label = match op {
            Some(op) => op.map_obs(0, raw_label)?,
            None => raw_label,
        };
        let obs = LeverObservation::from_label(t, frame_label, config.num_levers)?;
        let encoding = encode_observation(&obs, num_levers);
        let values = params.forward(&encoding)?;
        let frame_action = if explore_rng.gen::<f64>() < epsilon {
            explore_rng.gen_range(0..num_levers)
        } else {
            argmax_tie_lowest(&values)
        };
        let env_action = match &inv_op {
            Some(inv) => inv.map_action(0, frame_action)?,
            None => frame_action,
        };
        let teammate_action = teammate.act(&teammate_aoh, &mut teammate_rng)?;
        teammate_aoh.push_action(teammate_action);
        let joint = [env_action, teammate_action];

        let next = *env.transition(state, &joint).sample(&mut env_rng);
        let reward = *env.reward(next, &joint).sample(&mut env_rng);
        steps.push(TransitionStep {
            encoding,
            action: frame_action,
            reward,
        });

        if t < env.horizon() {
            raw_label = *env.observation(0, next, Some(&joint)).sample(&mut env_rng);
            teammate_aoh.push_observation(*env.observation(1, next, Some(&joint)).sample(&mut env_rng));
        }
        state = next;
    }
    Ok(steps)
}

/// Train a best response to `train_pop`, recording exact train/eval
/// returns of the greedy policy every epoch.
///
/// `group` is only consulted when `cfg.sba_enabled` is set (supplying it
/// with augmentation disabled changes nothing, stream for stream), in
/// which case it must be present.
pub fn train_best_response(
    env: &LeverGame,
    train_pop: &Population,
    group: Option<&SymmetryGroup>,
    cfg: &TrainConfig,
    eval_pop: &Population,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    train_pop.validate()?;
    eval_pop.validate()?;
    let sba_group = if cfg.sba_enabled {
        Some(group.ok_or_else(|| {
            Error::Invalid("sba_enabled requires a symmetry group".to_string())
        })?)
    } else {
        None
    };
    let augment_eval = cfg.augment_eval.unwrap_or(cfg.sba_enabled);
    let eval_group = if augment_eval { group } else { None };

    let config = *env.config();
    let num_levers = config.num_levers;
    let dims = [num_levers + 2, cfg.hidden_size, num_levers];
    let run = SeedStream::new(cfg.seed);
    let mut params = MlpParams::init(&dims, &mut run.child(tags::INIT, 0).rng())?;
    let mut adam = AdamState::new(
        &params,
        cfg.learning_rate,
        cfg.adam_beta1,
        cfg.adam_beta2,
        cfg.adam_epsilon,
    );

    let gamma = env.discount();
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let epsilon = cfg.exploration.value_at(epoch, cfg.epochs);
        let mut batch_items: Vec<BatchItem> = Vec::with_capacity(cfg.episodes_per_epoch * env.horizon());
        for e in 0..cfg.episodes_per_epoch {
            let episode = (epoch * cfg.episodes_per_epoch + e) as u64;
            let teammate = sample_member(train_pop, &mut run.child(tags::TEAMMATE, episode).rng());
            let op = sba_group
                .map(|g| sample_uniform(g, &mut run.child(tags::SYMMETRY, episode).rng()));
            let steps = rollout_training_episode(
                env,
                &params,
                teammate,
                op.as_ref(),
                epsilon,
                run.child(tags::EPISODE, episode),
            )?;
            // Return-to-go targets: with horizon 2 and no discounting these
            // coincide with n-step targets that bootstrap past the end.
            let mut to_go = 0.0;
            let mut targets = vec![0.0; steps.len()];
            for (i, step) in steps.iter().enumerate().rev() {
                to_go = step.reward + gamma * to_go;
                targets[i] = to_go;
            }
            for (step, target) in steps.into_iter().zip(targets) {
                batch_items.push(BatchItem {
                    x: step.encoding,
                    action: step.action,
                    target,
                });
            }
        }

        batch_items.shuffle(&mut run.child(tags::SHUFFLE, epoch as u64).rng());
        for chunk in batch_items.chunks(cfg.batch_size) {
            let (_, grads) = grad_batch(&params, chunk)?;
            adam.step(&mut params, &grads);
        }
        if !params.is_finite() {
            return Err(Error::Diverged {
                epoch,
                seed: cfg.seed,
                detail: "non-finite network parameter after optimization pass".to_string(),
            });
        }

        let greedy = greedy_policy(&params, &config)?;
        let metric_stream = run.child(tags::METRIC, epoch as u64);
        let train_return =
            metrics::robustness(env, &greedy, train_pop, sba_group, EvalMode::Exact, metric_stream)?
                .value;
        let eval_return =
            metrics::robustness(env, &greedy, eval_pop, eval_group, EvalMode::Exact, metric_stream)?
                .value;
        records.push(CurveRecord {
            epoch: epoch + 1,
            train_return,
            eval_return,
        });
    }

    let greedy = PolicySpec::table(
        format!("greedy-seed-{}", cfg.seed),
        match greedy_policy(&params, &config)?.kind {
            crate::population::PolicyKind::DeterministicTable(t) => t,
            _ => unreachable!("greedy export is a table"),
        },
    );
    Ok(TrainOutcome {
        policy: PolicySpec::mlp(format!("mlp-seed-{}", cfg.seed), params),
        greedy,
        curve: TrainingCurve {
            seed: cfg.seed,
            records,
        },
    })
}

/// Export the network's greedy policy as a deterministic table by
/// enumerating every observation class of the configuration.
pub fn greedy_policy(params: &MlpParams, config: &LeverGameConfig) -> Result<PolicySpec> {
    let mut entries = Vec::new();
    for obs in LeverObservation::enumerate(config) {
        let values = params.forward(&encode_observation(&obs, config.num_levers))?;
        entries.push(TableEntry {
            round: obs.round_index,
            partner: obs.partner_previous_action,
            action: argmax_tie_lowest(&values),
        });
    }
    Ok(PolicySpec::table(
        "greedy",
        TablePolicy::new(config.num_levers, entries)?,
    ))
}

/// Exact best-response policy to a deterministic lever population,
/// computed per observation class by enumeration.
///
/// With a full-permutation `group`, the expectation over ops is taken
/// analytically with uniform-image probabilities: the teammate's round-1
/// lever looks uniform, and in later rounds the observed lever predicts
/// the teammate's next pull exactly, for every lever. Observation classes
/// the training population can never produce fall back to the round-1
/// action (which is what matters when evaluating against unseen levers).
pub fn tabular_br_oracle(
    config: &LeverGameConfig,
    train_pop: &Population,
    group: Option<&SymmetryGroup>,
) -> Result<PolicySpec> {
    config.validate()?;
    let levers = constant_levers(train_pop)?;
    let l = config.num_levers;
    let with_sba = match group.map(SymmetryGroup::kind) {
        None | Some(GroupKind::IdentityOnly { .. }) => false,
        Some(GroupKind::FullPermutations { num_labels }) => {
            if *num_labels != l {
                return Err(Error::Dimension(format!(
                    "group permutes {num_labels} labels but the game has {l} levers"
                )));
            }
            true
        }
    };

    let mut counts = vec![0usize; l];
    for &k in &levers {
        counts[k] += 1;
    }
    // Round 1: maximize the match probability against the (augmented)
    // teammate lever distribution; uniform under augmentation, so the tie
    // break picks lever 0.
    let round1_probs: Vec<f64> = if with_sba {
        vec![1.0 / l as f64; l]
    } else {
        counts.iter().map(|&c| c as f64 / levers.len() as f64).collect()
    };
    let a_star = argmax_tie_lowest(&round1_probs);

    let mut entries = vec![TableEntry {
        round: 1,
        partner: None,
        action: a_star,
    }];
    for round in 2..=config.num_rounds {
        for k in 0..l {
            let action = if with_sba || counts[k] > 0 {
                // A deterministic teammate repeats its lever, and under
                // augmentation the observed-frame lever repeats likewise.
                k
            } else {
                a_star
            };
            entries.push(TableEntry {
                round,
                partner: Some(k),
                action,
            });
        }
    }
    Ok(PolicySpec::table(
        if with_sba { "sba-oracle" } else { "br-oracle" },
        TablePolicy::new(l, entries)?,
    ))
}
