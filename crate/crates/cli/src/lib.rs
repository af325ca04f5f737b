//! Experiment plumbing behind the `noisylab` binary: flat configs, the
//! training runner, theory calculators, Monte-Carlo comparisons and plots.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod report;
pub mod svg;

pub use error::{CliError, Result};
