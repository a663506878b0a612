//! Serializable policies and named populations.
//!
//! A [`PolicySpec`] is a policy in one of three portable forms: a
//! deterministic lookup table, a uniform-random policy, or an MLP queried
//! greedily. Tables key on the minimal sufficient statistic of a lever-game
//! history — the 1-based round index plus the partner's previous action
//! (`None` in round 1) — which keeps them enumerable. Population documents
//! are JSON with a `schema_version` field and canonical member ordering, so
//! serializing twice yields byte-identical text.

use crate::dist::FiniteDist;
use crate::env::{ActionId, Aoh, Environment, Policy};
use crate::error::{Error, Result};
use crate::learner::mlp::MlpParams;
use crate::metrics::{self, EvalMode};
use crate::rng::{tags, SeedStream};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const POPULATION_SCHEMA_VERSION: u32 = 1;

/// One observation class -> action rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableEntry {
    /// 1-based round index.
    pub round: usize,
    /// Partner's previous action; `None` only in round 1.
    pub partner: Option<ActionId>,
    pub action: ActionId,
}

/// Deterministic policy as an explicit observation-class table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TablePolicy {
    pub num_actions: usize,
    pub entries: Vec<TableEntry>,
}

impl TablePolicy {
    pub fn new(num_actions: usize, mut entries: Vec<TableEntry>) -> Result<Self> {
        if num_actions == 0 {
            return Err(Error::Schema("table policy needs num_actions >= 1".to_string()));
        }
        for e in &entries {
            if e.round == 0 {
                return Err(Error::Schema("table entry round must be >= 1".to_string()));
            }
            if (e.round == 1) != e.partner.is_none() {
                return Err(Error::Schema(format!(
                    "round {} entry must have partner {} (round 1 is the only no-partner round)",
                    e.round,
                    if e.round == 1 { "absent" } else { "present" }
                )));
            }
            if let Some(p) = e.partner {
                if p >= num_actions {
                    return Err(Error::Schema(format!(
                        "table entry partner {p} out of range 0..{num_actions}"
                    )));
                }
            }
            if e.action >= num_actions {
                return Err(Error::Schema(format!(
                    "table entry action {} out of range 0..{num_actions}",
                    e.action
                )));
            }
        }
        entries.sort_by_key(|e| (e.round, e.partner.map(|p| p as i64).unwrap_or(-1)));
        for w in entries.windows(2) {
            if w[0].round == w[1].round && w[0].partner == w[1].partner {
                return Err(Error::Schema(format!(
                    "duplicate table entry for round {} partner {:?}",
                    w[0].round, w[0].partner
                )));
            }
        }
        Ok(TablePolicy {
            num_actions,
            entries,
        })
    }

    /// Look up the action for a history's observation class.
    pub fn lookup(&self, aoh: &Aoh) -> Result<ActionId> {
        let round = aoh.round();
        let label = aoh.last_observation().ok_or_else(|| {
            Error::Invalid("table policy queried on an empty history".to_string())
        })?;
        // The no-partner sentinel is the label just past the action range.
        let partner = if label == self.num_actions {
            None
        } else if label < self.num_actions {
            Some(label)
        } else {
            return Err(Error::UnknownLabel {
                label,
                context: "table policy observation".to_string(),
                size: self.num_actions + 1,
            });
        };
        self.entries
            .iter()
            .find(|e| e.round == round && e.partner == partner)
            .map(|e| e.action)
            .ok_or_else(|| Error::UnsupportedPolicy {
                name: "table".to_string(),
                detail: format!("no entry for round {round}, partner {partner:?}"),
            })
    }

    /// The single action this table always plays, if it is constant.
    pub fn constant_action(&self) -> Option<ActionId> {
        let first = self.entries.first()?.action;
        self.entries.iter().all(|e| e.action == first).then_some(first)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum PolicyKind {
    DeterministicTable(TablePolicy),
    UniformRandom { num_actions: usize },
    Mlp(MlpParams),
}

/// A named serializable policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: PolicyKind,
}

impl PolicySpec {
    /// Observation-independent deterministic policy pulling `action` every
    /// round, with a total table over `num_rounds` rounds.
    pub fn constant(name: impl Into<String>, action: ActionId, num_actions: usize, num_rounds: usize) -> Result<Self> {
        let mut entries = vec![TableEntry {
            round: 1,
            partner: None,
            action,
        }];
        for round in 2..=num_rounds {
            for partner in 0..num_actions {
                entries.push(TableEntry {
                    round,
                    partner: Some(partner),
                    action,
                });
            }
        }
        Ok(PolicySpec {
            name: name.into(),
            kind: PolicyKind::DeterministicTable(TablePolicy::new(num_actions, entries)?),
        })
    }

    pub fn uniform(name: impl Into<String>, num_actions: usize) -> Self {
        PolicySpec {
            name: name.into(),
            kind: PolicyKind::UniformRandom { num_actions },
        }
    }

    pub fn table(name: impl Into<String>, table: TablePolicy) -> Self {
        PolicySpec {
            name: name.into(),
            kind: PolicyKind::DeterministicTable(table),
        }
    }

    pub fn mlp(name: impl Into<String>, params: MlpParams) -> Self {
        PolicySpec {
            name: name.into(),
            kind: PolicyKind::Mlp(params),
        }
    }

    /// The action this policy always plays regardless of observations, if
    /// it is an observation-independent deterministic table.
    pub fn as_constant_action(&self) -> Option<ActionId> {
        match &self.kind {
            PolicyKind::DeterministicTable(t) => t.constant_action(),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            PolicyKind::DeterministicTable(t) => {
                // Re-run construction checks on deserialized tables.
                TablePolicy::new(t.num_actions, t.entries.clone()).map(|_| ())
            }
            PolicyKind::UniformRandom { num_actions } => {
                if *num_actions == 0 {
                    Err(Error::Schema("uniform policy needs num_actions >= 1".to_string()))
                } else {
                    Ok(())
                }
            }
            PolicyKind::Mlp(params) => params.validate(),
        }
    }
}

impl Policy for PolicySpec {
    fn action_distribution(&self, aoh: &Aoh) -> Result<FiniteDist<ActionId>> {
        match &self.kind {
            PolicyKind::DeterministicTable(t) => Ok(FiniteDist::point(t.lookup(aoh)?)),
            PolicyKind::UniformRandom { num_actions } => Ok(FiniteDist::uniform(*num_actions)),
            PolicyKind::Mlp(params) => Ok(FiniteDist::point(crate::learner::mlp_greedy_action(
                params, aoh,
            )?)),
        }
    }
}

/// Named ordered set of policies with uniform sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub name: String,
    pub members: Vec<PolicySpec>,
}

impl Population {
    pub fn new(name: impl Into<String>, members: Vec<PolicySpec>) -> Result<Self> {
        let pop = Population {
            name: name.into(),
            members,
        };
        pop.validate()?;
        Ok(pop)
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::Schema(format!("population '{}' is empty", self.name)));
        }
        let mut names: Vec<&str> = self.members.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        for w in names.windows(2) {
            if w[0] == w[1] {
                return Err(Error::Schema(format!(
                    "population '{}' has duplicate member name '{}'",
                    self.name, w[0]
                )));
            }
        }
        for m in &self.members {
            m.validate()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Uniform draw from the population.
pub fn sample_member<'p, R: Rng + ?Sized>(pop: &'p Population, rng: &mut R) -> &'p PolicySpec {
    &pop.members[rng.gen_range(0..pop.members.len())]
}

#[derive(Debug, Serialize, Deserialize)]
struct PopulationFile {
    schema_version: u32,
    name: String,
    members: Vec<PolicySpec>,
}

/// Serialize to the canonical population document.
pub fn serialize_population(pop: &Population) -> String {
    let file = PopulationFile {
        schema_version: POPULATION_SCHEMA_VERSION,
        name: pop.name.clone(),
        members: pop.members.clone(),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("population serialization");
    text.push('\n');
    text
}

/// Parse and validate a population document.
pub fn deserialize_population(text: &str) -> Result<Population> {
    let file: PopulationFile =
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    if file.schema_version != POPULATION_SCHEMA_VERSION {
        return Err(Error::Schema(format!(
            "unsupported schema_version {} (expected {})",
            file.schema_version, POPULATION_SCHEMA_VERSION
        )));
    }
    Population::new(file.name, file.members)
}

/// Crossplay matrix: entry (i, j) is the seat-averaged expected return of
/// pairing member i with member j. Symmetric for a seat-symmetric game.
pub fn crossplay_matrix<E: Environment + ?Sized>(
    env: &E,
    pop: &Population,
    mode: EvalMode,
    stream: SeedStream,
) -> Result<Vec<Vec<f64>>> {
    let m = pop.members.len();
    let mut matrix = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            let report = metrics::crossplay(
                env,
                &pop.members[i],
                &pop.members[j],
                mode,
                stream.child(tags::METRIC, (i * m + j) as u64),
            )?;
            matrix[i][j] = report.value;
        }
    }
    Ok(matrix)
}
