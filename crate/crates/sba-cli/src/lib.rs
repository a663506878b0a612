//! Experiment harness and command line for the symmetry-breaking
//! augmentation laboratory.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;

pub use cli::run;
