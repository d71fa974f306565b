//! Benchmark instance generators, the Monte Carlo experiment runner, and
//! supporting utilities.

mod experiment;
mod generate;

pub use experiment::{
    log_log_slope, run_experiment, trial_seed, AlgorithmChoice, ExperimentConfig,
    ExperimentOutcome, InstanceSpec, NSummary, TrialResult,
};
pub use generate::{generate_chain, generate_garnet, renormalize_row_exact};

use crate::algorithms::AlgError;
use crate::mdp::MdpError;
use crate::solve::SolveError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error("no weakly communicating instance found after {attempts} attempts")]
    GenerationFailed { attempts: u32 },
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Alg(#[from] AlgError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(String),
}
