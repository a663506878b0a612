//! Coordination laboratory for symmetry-breaking augmentations in ad hoc
//! teamwork: a finite Dec-POMDP abstraction with exact and Monte Carlo
//! return evaluation, equivalence mappings and their group algebra,
//! best-response training against teammate populations, and the metrics
//! to judge the result — all verified end to end on the iterated lever
//! coordination game.

pub mod dist;
pub mod env;
pub mod error;
pub mod learner;
pub mod lever;
pub mod metrics;
pub mod population;
pub mod rng;
pub mod symmetry;
pub mod verify;

pub use error::{Error, Result};
