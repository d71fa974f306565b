//! Exact (to numerical tolerance) planning and structural quantities:
//! discounted policy evaluation and optimal control, average-reward
//! gain/bias/span, diameter, and mixing times.

mod average;
mod chain;
mod discounted;
mod hitting;
mod mixing;

pub use average::{gain_bias_of_policy, solve_average_optimal, GainBias, QFunction};
pub use chain::{policy_rewards, policy_transition_matrix};
pub use discounted::{
    bellman_backup_discounted, policy_evaluation_discounted, solve_discounted_optimal,
};
pub use hitting::diameter;
pub use mixing::{mixing_time, policy_class_mixing, MixingMode, MixingReport, POLICY_ENUM_CAP};

use crate::mdp::MdpError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("linear system is singular or ill-conditioned (residual {residual:e})")]
    SingularSystem { residual: f64 },
    #[error("no convergence within {max_iters} iterations")]
    NonConvergence { max_iters: u64 },
    #[error("MDP is not weakly communicating")]
    NotWeaklyCommunicating,
    #[error("policy chain has {classes} recurrent classes; no unique stationary distribution")]
    NoUniqueStationary { classes: usize },
    #[error("enumerating {required} policies exceeds the cap of {cap}")]
    EnumerationTooLarge { required: u128, cap: u64 },
    #[error("discount factor {gamma} outside (0, 1)")]
    BadDiscount { gamma: f64 },
    #[error(transparent)]
    Mdp(#[from] MdpError),
}
