use thiserror::Error;

/// Errors surfaced by environment simulation, symmetry algebra, policy
/// serialization, training, and metric evaluation.
#[derive(Error, Debug)]
pub enum Error {
    #[error("agent {agent} emitted out-of-range action {action} at step {step} (valid: 0..{num_actions})")]
    ActionOutOfRange {
        agent: usize,
        step: usize,
        action: usize,
        num_actions: usize,
    },

    #[error("distribution over {context} sums to {total}, expected 1 within {tolerance}")]
    InvalidDistribution {
        context: String,
        total: f64,
        tolerance: f64,
    },

    #[error("exact enumeration exceeded branch ceiling of {ceiling}; use the Monte Carlo estimator instead")]
    BranchCeilingExceeded { ceiling: u64 },

    #[error("symmetry ops bound to different environments: {left} vs {right}")]
    EnvMismatch { left: String, right: String },

    #[error("label {label} out of range for {context} (size {size})")]
    UnknownLabel {
        label: usize,
        context: String,
        size: usize,
    },

    #[error("map over {context} is not a bijection: {detail}")]
    NotABijection { context: String, detail: String },

    #[error("policy '{name}' does not support this operation: {detail}")]
    UnsupportedPolicy { name: String, detail: String },

    #[error("malformed policy or population document: {0}")]
    Schema(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("training diverged at epoch {epoch} (seed {seed}): {detail}")]
    Diverged {
        epoch: usize,
        seed: u64,
        detail: String,
    },

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
