//! Tabular Markov decision process toolkit.
//!
//! The crate provides, for finite MDPs with known reward functions:
//!
//! * core data types, validation, the span semi-norm, maximal-end-component
//!   analysis and an on-disk JSON document format ([`mdp`]);
//! * exact (to numerical tolerance) planning: discounted policy evaluation
//!   and optimal control, average-reward gain/bias/span, diameter and
//!   mixing times ([`solve`]);
//! * a seeded generative model with bit-reproducible per-(state, action)
//!   sample streams and empirical kernel construction ([`generative`]);
//! * model-based planning from samples: perturbed empirical planning for
//!   discounted MDPs and its span-calibrated average-reward reduction,
//!   plus the matching sample-size calculators ([`algorithms`]);
//! * exact evaluators for return-variance quantities and numeric auditors
//!   for the structural inequalities tying the optimal bias span to the
//!   diameter, mixing times and variance parameters ([`diagnostics`]);
//! * benchmark instance generators and a reproducible Monte Carlo
//!   experiment runner with CSV output ([`harness`]).

pub mod algorithms;
pub mod diagnostics;
pub mod generative;
pub mod harness;
pub mod mdp;
pub mod solve;

pub use mdp::{
    all_deterministic_policies, codec_load, codec_load_str, codec_save, is_weakly_communicating,
    mec_decomposition, span, validate_mdp, Mdp, MdpError, MecComponent, MecDecomposition, Policy,
    ValueVector,
};
pub use solve::{
    diameter, gain_bias_of_policy, mixing_time, policy_class_mixing,
    policy_evaluation_discounted, solve_average_optimal, solve_discounted_optimal, GainBias,
    MixingMode, MixingReport, QFunction, SolveError,
};
